//! Flipped M/M/1/K kernel.
//!
//! Vehicles arrive at rate `λ` and wait in a queue of capacity `K`; users
//! arrive at rate `μ` and take the vehicle that has waited longest. The
//! survival time of a vehicle is then the FCFS sojourn time of the queue.
//!
//! With `ρ = λ/μ` and `G(ρ) = Σ_{j<K} ρ^j` the survival density is
//!
//! ```text
//! f(y) = μ / G(ρ) · e^{-μy} · Σ_{x<K} (λy)^x / x!
//! ```
//!
//! which equals the usual `(μ-λ)μ^K / (μ^K-λ^K)` normalisation for `ρ ≠ 1`
//! and the uniform-state form `μ/K` at `ρ = 1`. Working with `G` keeps the
//! likelihood and its derivatives regular across `ρ = 1` and free of
//! `μ^K`-sized intermediates.

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{FqmError, Result};
use crate::gvst::GvstCollection;
use crate::numerics::{poisson_cdf_prefix, GeometricMoments, PartialSums};

/// `|ρ - 1|` below which the equal-rate formulas are used.
pub const EQUAL_RATE_TOL: f64 = 1e-9;

/// Rates are per hour.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FqmParams {
    /// Vehicle (drop-off) arrival rate.
    pub lambda: f64,
    /// User (pick-up) arrival rate.
    pub mu: f64,
    pub capacity_k: usize,
}

impl FqmParams {
    pub fn new(lambda: f64, mu: f64, capacity_k: usize) -> Result<Self> {
        let p = Self { lambda, mu, capacity_k };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda > 0.0) {
            return Err(FqmError::InvalidParameter(format!(
                "lambda must be positive, got {}",
                self.lambda
            )));
        }
        if !(self.mu.is_finite() && self.mu > 0.0) {
            return Err(FqmError::InvalidParameter(format!(
                "mu must be positive, got {}",
                self.mu
            )));
        }
        if self.capacity_k < 1 {
            return Err(FqmError::InvalidParameter("capacity must be at least 1".into()));
        }
        Ok(())
    }

    /// Traffic intensity `λ/μ`.
    pub fn rho(&self) -> f64 {
        self.lambda / self.mu
    }

    pub fn is_equal_rate(&self) -> bool {
        (self.rho() - 1.0).abs() < EQUAL_RATE_TOL
    }
}

/// Steady-state law of the inventory, `P_0..=P_K`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateDistribution {
    pub probabilities: Vec<f64>,
}

impl StateDistribution {
    pub fn empty_probability(&self) -> f64 {
        self.probabilities[0]
    }

    pub fn full_probability(&self) -> f64 {
        *self.probabilities.last().expect("K >= 1")
    }
}

pub fn steady_state_probs(params: &FqmParams) -> Result<StateDistribution> {
    params.validate()?;
    let k = params.capacity_k;
    let probabilities = if params.is_equal_rate() {
        vec![1.0 / (k + 1) as f64; k + 1]
    } else {
        // normalised ρ^x over x = 0..=K, i.e. (1-ρ)ρ^x / (1-ρ^{K+1})
        GeometricMoments::weights(params.rho(), k + 1)
    };
    Ok(StateDistribution { probabilities })
}

fn check_duration(y: f64) -> Result<()> {
    if y.is_nan() || y < 0.0 {
        return Err(FqmError::NegativeDuration(y));
    }
    Ok(())
}

/// Mixing weights `P_x / (1 - P_K)` for `x = 0..K`: the state seen by an
/// admitted vehicle.
fn admitted_state_weights(params: &FqmParams) -> Vec<f64> {
    let k = params.capacity_k;
    if params.is_equal_rate() {
        vec![1.0 / k as f64; k]
    } else {
        GeometricMoments::weights(params.rho(), k)
    }
}

/// Survival-time CDF `F_Y(y)`.
pub fn gvst_cdf(params: &FqmParams, y: f64) -> Result<f64> {
    params.validate()?;
    check_duration(y)?;
    if y == 0.0 {
        return Ok(0.0);
    }
    if y.is_infinite() {
        return Ok(1.0);
    }
    let k = params.capacity_k;
    let weights = admitted_state_weights(params);
    let lower = poisson_cdf_prefix(params.mu * y, k);
    let survival: f64 = weights.iter().zip(&lower).map(|(w, q)| w * q).sum();
    Ok((1.0 - survival).clamp(0.0, 1.0))
}

/// Survival-time density `f_Y(y)` (per hour).
pub fn gvst_pdf(params: &FqmParams, y: f64) -> Result<f64> {
    params.validate()?;
    check_duration(y)?;
    if y.is_infinite() {
        return Ok(0.0);
    }
    Ok(log_pdf_unchecked(params, y).exp())
}

fn log_pdf_unchecked(params: &FqmParams, y: f64) -> f64 {
    let k = params.capacity_k;
    let sums = PartialSums::new(k);
    if params.is_equal_rate() {
        // μ/K · e^{-μy} Σ_{x<K} (μy)^x / x!
        -params.mu * y + params.mu.ln() - (k as f64).ln() + sums.eval(params.mu * y).log_sum
    } else {
        let g = GeometricMoments::new(params.rho(), k);
        -params.mu * y + params.mu.ln() - g.log_sum + sums.eval(params.lambda * y).log_sum
    }
}

/// Log-likelihood of a sample with its gradient and Hessian in `(λ, μ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LikelihoodEvaluation {
    pub value: f64,
    pub grad_lambda: f64,
    pub grad_mu: f64,
    pub d2_lambda_lambda: f64,
    pub d2_lambda_mu: f64,
    pub d2_mu_mu: f64,
}

impl LikelihoodEvaluation {
    /// Hessian ordered as `(λ, μ)`.
    pub fn hessian(&self) -> [[f64; 2]; 2] {
        [
            [self.d2_lambda_lambda, self.d2_lambda_mu],
            [self.d2_lambda_mu, self.d2_mu_mu],
        ]
    }

    pub fn gradient(&self) -> [f64; 2] {
        [self.grad_lambda, self.grad_mu]
    }
}

fn require_samples(samples: &GvstCollection) -> Result<()> {
    if samples.is_empty() {
        return Err(FqmError::EmptySample("no survival samples".into()));
    }
    if let Some(&y) = samples.samples().iter().find(|&&y| !(y > 0.0)) {
        return Err(FqmError::InvalidParameter(format!("sample must be positive, got {y}")));
    }
    Ok(())
}

/// Log-likelihood
///
/// ```text
/// L = -μ Σy + N_g (ln μ - ln G(ρ)) + Σ ln Σ_{k<K} (λ y_i)^k / k!
/// ```
///
/// and its analytic first and second derivatives. With `m`, `v` the mean and
/// variance of `j` under weights `ρ^j` on `0..K`:
///
/// ```text
/// ∂L/∂λ   = -N_g m/λ + Σ y_i (1 - u1_i)
/// ∂L/∂μ   = -Σy + N_g (1 + m)/μ
/// ∂²L/∂λ² =  N_g (m - v)/λ² + Σ y_i² (u1_i - u2_i - u1_i²)
/// ∂²L/∂λ∂μ = N_g v/(λμ)
/// ∂²L/∂μ² = -N_g (1 + m + v)/μ²
/// ```
///
/// where `u1_i`, `u2_i` are the shares of the last two terms in the partial
/// exponential sum at `λ y_i`.
pub fn log_likelihood(params: &FqmParams, samples: &GvstCollection) -> Result<LikelihoodEvaluation> {
    params.validate()?;
    require_samples(samples)?;
    let k = params.capacity_k;
    let (lambda, mu) = (params.lambda, params.mu);
    let n = samples.len() as f64;
    let g = GeometricMoments::new(params.rho(), k);
    let sums = PartialSums::new(k);

    let mut sum_y = 0.0;
    let mut log_terms = 0.0;
    let mut grad_inner = 0.0;
    let mut curv_inner = 0.0;
    for &y in samples.samples() {
        let ps = sums.eval(lambda * y);
        sum_y += y;
        log_terms += ps.log_sum;
        grad_inner += y * (1.0 - ps.top_ratio);
        let u1 = ps.top_ratio;
        curv_inner += y * y * (u1 - ps.second_ratio - u1 * u1);
    }

    Ok(LikelihoodEvaluation {
        value: -mu * sum_y + n * (mu.ln() - g.log_sum) + log_terms,
        grad_lambda: -n * g.mean / lambda + grad_inner,
        grad_mu: -sum_y + n * (1.0 + g.mean) / mu,
        d2_lambda_lambda: n * (g.mean - g.variance) / (lambda * lambda) + curv_inner,
        d2_lambda_mu: n * g.variance / (lambda * mu),
        d2_mu_mu: -n * (1.0 + g.mean + g.variance) / (mu * mu),
    })
}

/// Gradient `(∂L/∂λ, ∂L/∂μ)`; its roots are the critical points of the likelihood.
pub fn stationarity_residuals(params: &FqmParams, samples: &GvstCollection) -> Result<[f64; 2]> {
    log_likelihood(params, samples).map(|e| e.gradient())
}

/// Likelihood in `μ` alone with `λ` pinned to the observed drop-off rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OneSidedEvaluation {
    pub value: f64,
    /// `∂L/∂μ`
    pub score: f64,
    /// `∂²L/∂μ²`
    pub curvature: f64,
}

/// One-sided log-likelihood in `μ` with `λ = n_d`.
///
/// Strictly concave in `μ`: the curvature is `-N_g (1 + m + v)/μ²`.
pub fn one_sided_log_likelihood(
    mu: f64,
    n_d: f64,
    capacity_k: usize,
    samples: &GvstCollection,
) -> Result<OneSidedEvaluation> {
    require_samples(samples)?;
    if !(mu.is_finite() && mu > 0.0) {
        return Err(FqmError::InvalidParameter(format!("mu must be positive, got {mu}")));
    }
    if capacity_k < 1 {
        return Err(FqmError::InvalidParameter("capacity must be at least 1".into()));
    }
    let n = samples.len() as f64;
    let sum_y = samples.sum();
    let (log_g, mean, var) = if n_d > 0.0 {
        let g = GeometricMoments::new(n_d / mu, capacity_k);
        (g.log_sum, g.mean, g.variance)
    } else {
        // λ → 0: only the j = 0 weight survives
        (0.0, 0.0, 0.0)
    };
    let sums = PartialSums::new(capacity_k);
    let log_terms: f64 = samples
        .samples()
        .iter()
        .map(|&y| sums.eval(n_d.max(0.0) * y).log_sum)
        .sum();
    Ok(OneSidedEvaluation {
        value: -mu * sum_y + n * (mu.ln() - log_g) + log_terms,
        score: -sum_y + n * (1.0 + mean) / mu,
        curvature: -n * (1.0 + mean + var) / (mu * mu),
    })
}

/// Draws survival times from the model as a mixture: the admitted state `x`
/// has weight `P_x / (1 - P_K)` and, given `x`, the survival time is the
/// `(x+1)`-th user inter-arrival, i.e. `Gamma(x + 1, 1/μ)`.
pub fn sample_gvst<R: Rng + ?Sized>(params: &FqmParams, n: usize, rng: &mut R) -> Result<Vec<f64>> {
    params.validate()?;
    let weights = admitted_state_weights(params);
    let mut cumulative = Vec::with_capacity(weights.len());
    let mut acc = 0.0;
    for w in &weights {
        acc += w;
        cumulative.push(acc);
    }
    let gammas: Vec<Gamma<f64>> = (0..weights.len())
        .map(|x| Gamma::new((x + 1) as f64, 1.0 / params.mu).expect("positive shape and scale"))
        .collect();
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let u: f64 = rng.random::<f64>() * acc;
        let x = cumulative.partition_point(|&c| c < u).min(weights.len() - 1);
        out.push(gammas[x].sample(rng));
    }
    Ok(out)
}
