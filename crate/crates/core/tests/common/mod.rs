//! Independent reference implementations used by the integration tests.
//! Everything here is written from the printed closed forms with plain
//! sums, without going through the library's log-space kernel.

#![allow(dead_code)]

use fqm_core::{gvst_cdf, gvst_pdf, FqmParams};
use rand::Rng;

/// `Σ_{k<K} x^k / k!` summed directly.
pub fn naive_partial_exp(x: f64, k: usize) -> f64 {
    let mut term = 1.0;
    let mut sum = 1.0;
    for j in 1..k {
        term *= x / j as f64;
        sum += term;
    }
    sum
}

/// Log-likelihood as printed, for `λ ≠ μ`.
pub fn printed_log_likelihood(lambda: f64, mu: f64, k: usize, ys: &[f64]) -> f64 {
    let n = ys.len() as f64;
    let kf = k as i32;
    let middle = (mu.powi(kf + 1) - lambda * mu.powi(kf)) / (mu.powi(kf) - lambda.powi(kf));
    -mu * ys.iter().sum::<f64>()
        + n * middle.ln()
        + ys.iter().map(|&y| naive_partial_exp(lambda * y, k).ln()).sum::<f64>()
}

/// Printed `∂L/∂λ`.
pub fn printed_grad_lambda(lambda: f64, mu: f64, k: usize, ys: &[f64]) -> f64 {
    let n = ys.len() as f64;
    let kf = k as i32;
    let mut data = 0.0;
    for &y in ys {
        let mut num = 0.0;
        let mut fact = 1.0;
        for j in 0..k {
            if j > 0 {
                fact *= j as f64;
                num += y.powi(j as i32) * lambda.powi(j as i32 - 1) * j as f64 / fact;
            }
        }
        data += num / naive_partial_exp(lambda * y, k);
    }
    -n / (mu - lambda) + n * k as f64 * lambda.powi(kf - 1) / (mu.powi(kf) - lambda.powi(kf)) + data
}

/// Printed `∂L/∂μ`; with `λ = N_d` this is also the one-sided score.
pub fn printed_grad_mu(lambda: f64, mu: f64, k: usize, ys: &[f64]) -> f64 {
    let n = ys.len() as f64;
    let kf = k as i32;
    -ys.iter().sum::<f64>() + n / (mu - lambda) - n * k as f64 * mu.powi(kf - 1) / (mu.powi(kf) - lambda.powi(kf))
        + n * k as f64 / mu
}

/// Printed `∂²L/∂μ²`.
pub fn printed_d2_mu_mu(lambda: f64, mu: f64, k: usize, n: f64) -> f64 {
    let kf = k as i32;
    let (mk, lk) = (mu.powi(kf), lambda.powi(kf));
    -n / (mu - lambda).powi(2) - n * k as f64 * lk * (lk - (1.0 + k as f64) * mk) / (mu * mu * (mk - lk).powi(2))
}

/// Printed `∂²L/∂λ∂μ`.
pub fn printed_d2_lambda_mu(lambda: f64, mu: f64, k: usize, n: f64) -> f64 {
    let kf = k as i32;
    let (mk, lk) = (mu.powi(kf), lambda.powi(kf));
    n / (mu - lambda).powi(2) - n * (k * k) as f64 * mu.powi(kf - 1) * lambda.powi(kf - 1) / (mk - lk).powi(2)
}

/// Printed one-sided curvature `H_o` with `λ = N_d`.
pub fn printed_one_sided_curvature(n_d: f64, mu: f64, k: usize, n: f64) -> f64 {
    let kf = k as i32;
    let (mk, dk) = (mu.powi(kf), n_d.powi(kf));
    -n / (mu - n_d).powi(2) + n * k as f64 * dk * ((1.0 + k as f64) * mk - dk) / (mu * mu * (mk - dk).powi(2))
}

/// Equal-rate density `μ/K · e^{-μy} · Σ_{k<K} (μy)^k / k!`.
pub fn equal_rate_pdf(mu: f64, k: usize, y: f64) -> f64 {
    mu / k as f64 * (-mu * y).exp() * naive_partial_exp(mu * y, k)
}

/// Draws by inverting `gvst_cdf`: Newton steps on the density, falling back
/// to bisection whenever a step leaves the bracket.
pub fn inverse_cdf_sample<R: Rng>(params: &FqmParams, n: usize, rng: &mut R) -> Vec<f64> {
    let scale = (params.capacity_k as f64 + 10.0 * (params.capacity_k as f64).sqrt() + 40.0) / params.mu;
    (0..n)
        .map(|_| {
            let u: f64 = rng.random::<f64>();
            let (mut lo, mut hi) = (0.0f64, scale);
            while gvst_cdf(params, hi).unwrap() < u {
                hi *= 2.0;
            }
            let mut y = 0.5 * (lo + hi);
            for _ in 0..200 {
                let f = gvst_cdf(params, y).unwrap() - u;
                if f < 0.0 {
                    lo = y;
                } else {
                    hi = y;
                }
                if hi - lo < 1e-14 * hi.max(1e-300) {
                    break;
                }
                let d = gvst_pdf(params, y).unwrap();
                let step = y - f / d;
                y = if d > 0.0 && step > lo && step < hi {
                    step
                } else {
                    0.5 * (lo + hi)
                };
                if f.abs() < 1e-15 {
                    break;
                }
            }
            y.max(1e-12)
        })
        .collect()
}

/// Composite Simpson rule on `[a, b]` with `intervals` (even) panels.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, intervals: usize) -> f64 {
    let n = intervals + intervals % 2;
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        let x = a + i as f64 * h;
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(x);
    }
    s * h / 3.0
}

/// Eigenvalues of a symmetric 2x2 matrix, ascending.
pub fn sym_eigen2(m: [[f64; 2]; 2]) -> (f64, f64) {
    let tr = m[0][0] + m[1][1];
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    let disc = (tr * tr / 4.0 - det).max(0.0).sqrt();
    (tr / 2.0 - disc, tr / 2.0 + disc)
}
