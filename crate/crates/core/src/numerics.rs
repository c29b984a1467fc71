//! Log-space helpers shared by the distribution kernel.
//!
//! Two finite sums show up everywhere in the flipped-queue formulas:
//!
//! * the geometric sum `G(ρ) = Σ_{j<K} ρ^j`, whose log and whose first two
//!   moments (under weights `ρ^j / G`) drive the rate-dependent part of the
//!   likelihood, and
//! * the truncated exponential series `S_K(x) = Σ_{k<K} x^k / k!`, which is
//!   `e^x` times a Poisson lower tail.
//!
//! Both are evaluated relative to their largest term so that neither
//! `ρ^K` nor `x^k / k!` is ever formed directly.

/// `ln(Σ exp(v))` over a slice. Returns `-inf` for an empty slice.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Table of `ln k!` for `k = 0..n`.
pub fn ln_factorials(n: usize) -> Vec<f64> {
    let mut table = Vec::with_capacity(n.max(1));
    let mut acc = 0.0;
    table.push(0.0);
    for k in 1..n {
        acc += (k as f64).ln();
        table.push(acc);
    }
    table
}

/// Summary of the truncated geometric weights `ρ^j`, `j = 0..terms`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeometricMoments {
    /// `ln Σ_{j<terms} ρ^j`
    pub log_sum: f64,
    /// Mean index under the normalised weights.
    pub mean: f64,
    /// Variance of the index under the normalised weights.
    pub variance: f64,
}

impl GeometricMoments {
    pub fn new(rho: f64, terms: usize) -> Self {
        debug_assert!(rho > 0.0 && terms >= 1);
        let lr = rho.ln();
        // largest weight sits at one end of the range
        let peak = if lr > 0.0 { (terms - 1) as f64 * lr } else { 0.0 };
        let mut total = 0.0;
        let mut first = 0.0;
        for j in 0..terms {
            let w = (j as f64 * lr - peak).exp();
            total += w;
            first += w * j as f64;
        }
        let mean = first / total;
        let mut second = 0.0;
        for j in 0..terms {
            let w = (j as f64 * lr - peak).exp();
            let d = j as f64 - mean;
            second += w * d * d;
        }
        Self {
            log_sum: peak + total.ln(),
            mean,
            variance: second / total,
        }
    }

    /// Normalised weights `ρ^j / Σ ρ^i` for `j = 0..terms`.
    pub fn weights(rho: f64, terms: usize) -> Vec<f64> {
        let lr = rho.ln();
        let peak = if lr > 0.0 { (terms - 1) as f64 * lr } else { 0.0 };
        let mut w: Vec<f64> = (0..terms).map(|j| (j as f64 * lr - peak).exp()).collect();
        let total: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= total);
        w
    }
}

/// Truncated exponential series `S_K(x)` together with the two top-term
/// ratios needed for derivatives in `x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PartialSum {
    /// `ln S_K(x)`
    pub log_sum: f64,
    /// `t_{K-1} / S_K` where `t_k = x^k / k!`
    pub top_ratio: f64,
    /// `t_{K-2} / S_K` (zero when `K = 1`)
    pub second_ratio: f64,
}

/// Evaluator for `S_K(x)` at a fixed number of terms.
#[derive(Debug, Clone)]
pub struct PartialSums {
    terms: usize,
    ln_fact: Vec<f64>,
}

impl PartialSums {
    pub fn new(terms: usize) -> Self {
        assert!(terms >= 1, "at least one term required");
        Self {
            terms,
            ln_fact: ln_factorials(terms),
        }
    }

    pub fn eval(&self, x: f64) -> PartialSum {
        let k = self.terms;
        if x <= 0.0 {
            return PartialSum {
                log_sum: 0.0,
                top_ratio: if k == 1 { 1.0 } else { 0.0 },
                second_ratio: if k == 2 { 1.0 } else { 0.0 },
            };
        }
        // Terms are unimodal with the peak at min(floor(x), K-1).
        let mode = (x.floor() as usize).min(k - 1);
        let ln_x = x.ln();
        let ln_peak = mode as f64 * ln_x - self.ln_fact[mode];

        let mut total = 1.0;
        let mut top = if mode == k - 1 { 1.0 } else { 0.0 };
        let mut second = if k >= 2 && mode == k - 2 { 1.0 } else { 0.0 };

        let mut r = 1.0;
        for j in (mode + 1)..k {
            r *= x / j as f64;
            total += r;
            if j == k - 1 {
                top = r;
            } else if j == k - 2 {
                second = r;
            }
        }
        r = 1.0;
        for j in (1..=mode).rev() {
            // t_{j-1} / t_j = j / x
            r *= j as f64 / x;
            total += r;
            if j - 1 == k - 2 {
                second = r;
            }
        }
        PartialSum {
            log_sum: ln_peak + total.ln(),
            top_ratio: top / total,
            second_ratio: second / total,
        }
    }
}

/// Poisson lower-tail probabilities `P(N ≤ x)` for `x = 0..terms` with mean `m`.
pub fn poisson_cdf_prefix(m: f64, terms: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(terms);
    if m <= 0.0 {
        out.resize(terms, 1.0);
        return out;
    }
    let ln_m = m.ln();
    let mut ln_fact = 0.0;
    let mut acc = 0.0;
    for z in 0..terms {
        if z > 0 {
            ln_fact += (z as f64).ln();
        }
        acc += (z as f64 * ln_m - m - ln_fact).exp();
        out.push(acc.min(1.0));
    }
    out
}
