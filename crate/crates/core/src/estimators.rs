//! Estimators for the user arrival rate.
//!
//! * two-sided: joint `(λ, μ)` root of the likelihood gradient inside a box
//!   anchored at the observed drop-off and pick-up rates,
//! * one-sided closed form: `μ̃ = N_d + N_g / Σy`,
//! * one-sided Newton: exact root of `∂L/∂μ = 0` with `λ` pinned to `N_d`.
//!
//! All rates are per hour and all survival times in hours.

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::distribution::{log_likelihood, one_sided_log_likelihood, FqmParams};
use crate::error::{FqmError, Result};
use crate::gvst::GvstCollection;

/// Upper bounds default to this multiple of the largest observed rate.
pub const DEFAULT_UPPER_FACTOR: f64 = 10.0;
/// Step halvings tried per iteration before giving up on a direction.
pub const MAX_HALVINGS: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimationMethod {
    TwoSided,
    OneSidedClosedForm,
    OneSidedNewton,
}

impl EstimationMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            EstimationMethod::TwoSided => "two_sided",
            EstimationMethod::OneSidedClosedForm => "one_sided_closed_form",
            EstimationMethod::OneSidedNewton => "one_sided_newton",
        }
    }
}

/// Search box and stopping rules. Unset bounds are filled in from the
/// observed rates: lower bounds `(N_d, N_p)`, upper bounds ten times the
/// larger of the two.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub lambda_lower: Option<f64>,
    pub lambda_upper: Option<f64>,
    pub mu_lower: Option<f64>,
    pub mu_upper: Option<f64>,
    /// Relative step tolerance; the residual tolerance is `tol · N_g`.
    pub tol: f64,
    pub max_iters: usize,
    pub equal_rate_tol: f64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            lambda_lower: None,
            lambda_upper: None,
            mu_lower: None,
            mu_upper: None,
            tol: 1e-6,
            max_iters: 500,
            equal_rate_tol: crate::distribution::EQUAL_RATE_TOL,
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(FqmError::InvalidConfig("tol must be positive".into()));
        }
        if self.max_iters < 1 {
            return Err(FqmError::InvalidConfig("max_iters must be at least 1".into()));
        }
        Ok(())
    }

    /// Resolves the box for observed rates `n_d`, `n_p` and a fallback scale
    /// used when both rates are zero.
    pub fn bounds(&self, n_d: f64, n_p: f64, fallback_scale: f64) -> Result<Bounds> {
        self.validate()?;
        let scale = n_d.max(n_p).max(fallback_scale);
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(FqmError::Degenerate("no positive rate scale for bounds".into()));
        }
        let floor = 1e-6 * scale;
        let b = Bounds {
            lambda_lower: self.lambda_lower.unwrap_or(n_d).max(floor),
            lambda_upper: self.lambda_upper.unwrap_or(DEFAULT_UPPER_FACTOR * scale),
            mu_lower: self.mu_lower.unwrap_or(n_p).max(floor),
            mu_upper: self.mu_upper.unwrap_or(DEFAULT_UPPER_FACTOR * scale),
        };
        if !(b.lambda_lower < b.lambda_upper) || !(b.mu_lower < b.mu_upper) {
            return Err(FqmError::InvalidConfig(format!(
                "empty search box: lambda [{}, {}], mu [{}, {}]",
                b.lambda_lower, b.lambda_upper, b.mu_lower, b.mu_upper
            )));
        }
        Ok(b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub lambda_lower: f64,
    pub lambda_upper: f64,
    pub mu_lower: f64,
    pub mu_upper: f64,
}

impl Bounds {
    fn lower(&self) -> Vector2<f64> {
        Vector2::new(self.lambda_lower, self.mu_lower)
    }

    fn upper(&self) -> Vector2<f64> {
        Vector2::new(self.lambda_upper, self.mu_upper)
    }

    fn project(&self, theta: Vector2<f64>) -> Vector2<f64> {
        theta.zip_zip_map(&self.lower(), &self.upper(), |t, lo, hi| t.clamp(lo, hi))
    }

    pub fn contains(&self, lambda: f64, mu: f64) -> bool {
        (self.lambda_lower..=self.lambda_upper).contains(&lambda) && (self.mu_lower..=self.mu_upper).contains(&mu)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationResult {
    pub method: EstimationMethod,
    pub mu_hat: f64,
    /// Only the two-sided method estimates `λ`.
    pub lambda_hat: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Norm of the residual of the equation the method solves, at the
    /// returned point. For the two-sided method, gradient components pushing
    /// out of the box at an active bound are excluded.
    pub final_residual_norm: f64,
    /// Not reported by the closed form, which does not see the capacity.
    pub log_likelihood_at_solution: Option<f64>,
    pub bounds: Option<Bounds>,
    pub warnings: Vec<String>,
}

fn require_nonempty(samples: &GvstCollection, needed: usize) -> Result<f64> {
    if samples.is_empty() {
        return Err(FqmError::EmptySample("no survival samples".into()));
    }
    if samples.len() < needed {
        return Err(FqmError::TooFewSamples {
            needed,
            got: samples.len(),
        });
    }
    let sum = samples.sum();
    if !(sum > 0.0) {
        return Err(FqmError::Degenerate("survival times sum to zero".into()));
    }
    Ok(sum)
}

/// `μ̃ = N_d + N_g / Σy`.
pub fn estimate_one_sided_closed_form(samples: &GvstCollection, n_d: f64) -> Result<EstimationResult> {
    let sum_y = require_nonempty(samples, 1)?;
    if !(n_d >= 0.0) {
        return Err(FqmError::InvalidParameter(format!(
            "drop-off rate must be non-negative, got {n_d}"
        )));
    }
    let mu = n_d + samples.len() as f64 / sum_y;
    Ok(EstimationResult {
        method: EstimationMethod::OneSidedClosedForm,
        mu_hat: mu,
        lambda_hat: None,
        iterations: 0,
        converged: true,
        final_residual_norm: 0.0,
        log_likelihood_at_solution: None,
        bounds: None,
        warnings: Vec::new(),
    })
}

/// Root of the one-sided score in `μ` with `λ = n_d`, by Newton steps
/// safeguarded with bisection. The score is strictly decreasing in `μ`, so
/// the root is unique; it is searched on `(0, μ_upper]`.
pub fn estimate_one_sided_newton(
    samples: &GvstCollection,
    n_d: f64,
    n_p: f64,
    capacity_k: usize,
    config: &EstimatorConfig,
) -> Result<EstimationResult> {
    let sum_y = require_nonempty(samples, 1)?;
    config.validate()?;
    if capacity_k < 1 {
        return Err(FqmError::InvalidParameter("capacity must be at least 1".into()));
    }
    if !(n_d >= 0.0) {
        return Err(FqmError::InvalidParameter(format!(
            "drop-off rate must be non-negative, got {n_d}"
        )));
    }
    let n = samples.len() as f64;
    let scale = n_d.max(n_p).max(n / sum_y);
    let upper = config.mu_upper.unwrap_or(DEFAULT_UPPER_FACTOR * scale);
    let target = config.tol * n;
    let mut warnings = Vec::new();

    let score = |mu: f64| one_sided_log_likelihood(mu, n_d, capacity_k, samples);

    let mut lo = 0.0f64;
    let mut hi = upper;
    let at_hi = score(hi)?;
    if at_hi.score > 0.0 {
        warnings.push(format!("root lies above the upper bound {upper}; returning the bound"));
        return Ok(EstimationResult {
            method: EstimationMethod::OneSidedNewton,
            mu_hat: hi,
            lambda_hat: None,
            iterations: 0,
            converged: false,
            final_residual_norm: at_hi.score.abs(),
            log_likelihood_at_solution: Some(at_hi.value),
            bounds: None,
            warnings,
        });
    }

    let mut mu = if n_p > n_d { n_p } else { n_d + 1.0 };
    if !(mu > lo && mu < hi) {
        mu = 0.5 * (lo + hi);
    }
    let mut eval = score(mu)?;
    let mut iterations = 0;
    let mut converged = eval.score.abs() < target;
    while !converged && iterations < config.max_iters {
        iterations += 1;
        if eval.score > 0.0 {
            lo = mu;
        } else {
            hi = mu;
        }
        let newton = mu - eval.score / eval.curvature;
        let next = if newton.is_finite() && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if next == mu {
            break;
        }
        mu = next;
        eval = score(mu)?;
        converged = eval.score.abs() < target;
        if hi - lo <= f64::EPSILON * hi {
            break;
        }
    }
    // polish to machine precision; Newton converges quadratically here
    for _ in 0..8 {
        if eval.score == 0.0 {
            break;
        }
        let next = mu - eval.score / eval.curvature;
        if !(next.is_finite() && next > 0.0 && next <= upper) || next == mu {
            break;
        }
        let trial = score(next)?;
        if trial.score.abs() >= eval.score.abs() {
            break;
        }
        mu = next;
        eval = trial;
    }
    converged = converged || eval.score.abs() < target;
    if !converged {
        warnings.push(format!(
            "no root within tolerance after {iterations} iterations (|score| = {:.3e})",
            eval.score.abs()
        ));
    }
    if mu <= n_d {
        warnings.push(format!(
            "root {mu:.4} does not exceed the drop-off rate {n_d:.4}; one-sided assumption is doubtful"
        ));
    }
    Ok(EstimationResult {
        method: EstimationMethod::OneSidedNewton,
        mu_hat: mu,
        lambda_hat: None,
        iterations,
        converged,
        final_residual_norm: eval.score.abs(),
        log_likelihood_at_solution: Some(eval.value),
        bounds: None,
        warnings,
    })
}

struct TwoSidedState {
    theta: Vector2<f64>,
    value: f64,
    residual: Vector2<f64>,
    jacobian: Matrix2<f64>,
    /// Coordinates held at a bound because descent on `½‖r‖²` points outward.
    pinned: [bool; 2],
    /// `‖r‖`
    merit: f64,
    /// Norm of `Jᵀr` restricted to free coordinates.
    projected_descent: f64,
}

impl TwoSidedState {
    fn evaluate(theta: Vector2<f64>, k: usize, samples: &GvstCollection, bounds: &Bounds) -> Result<Self> {
        let params = FqmParams::new(theta[0], theta[1], k)?;
        let e = log_likelihood(&params, samples)?;
        let residual = Vector2::new(e.grad_lambda, e.grad_mu);
        let h = e.hessian();
        let jacobian = Matrix2::new(h[0][0], h[0][1], h[1][0], h[1][1]);
        let mut g = jacobian.transpose() * residual;
        let lower = bounds.lower();
        let upper = bounds.upper();
        let mut pinned = [false; 2];
        for i in 0..2 {
            let at_lower = theta[i] <= lower[i] && g[i] > 0.0;
            let at_upper = theta[i] >= upper[i] && g[i] < 0.0;
            if at_lower || at_upper {
                pinned[i] = true;
                g[i] = 0.0;
            }
        }
        Ok(Self {
            theta,
            value: e.value,
            residual,
            jacobian,
            pinned,
            merit: residual.norm(),
            projected_descent: g.norm(),
        })
    }

    fn at_boundary(&self, bounds: &Bounds) -> bool {
        let lower = bounds.lower();
        let upper = bounds.upper();
        (0..2).any(|i| self.theta[i] <= lower[i] || self.theta[i] >= upper[i])
    }

    /// Gauss-Newton step: least-squares solution of `J Δ = -r` over the free
    /// coordinates.
    fn newton_direction(&self) -> Option<Vector2<f64>> {
        let free: Vec<usize> = (0..2).filter(|&i| !self.pinned[i]).collect();
        let mut step = Vector2::zeros();
        match free.len() {
            0 => return None,
            1 => {
                let i = free[0];
                let col = self.jacobian.column(i);
                let denom = col.norm_squared();
                if denom == 0.0 || !denom.is_finite() {
                    return None;
                }
                step[i] = -col.dot(&self.residual) / denom;
            }
            _ => {
                let svd = self.jacobian.svd(true, true);
                let eps = 1e-12 * svd.singular_values.max();
                step = svd.solve(&(-self.residual), eps).ok()?;
            }
        }
        step.iter().all(|v| v.is_finite()).then_some(step)
    }

    /// Steepest descent on `½‖r‖²` with a Cauchy step length.
    fn gradient_direction(&self) -> Option<Vector2<f64>> {
        let mut g = self.jacobian.transpose() * self.residual;
        for i in 0..2 {
            if self.pinned[i] {
                g[i] = 0.0;
            }
        }
        let denom = (self.jacobian * g).norm_squared();
        if denom == 0.0 || !denom.is_finite() {
            return None;
        }
        Some(-g * (g.norm_squared() / denom))
    }
}

/// Joint estimate of `(λ, μ)`: minimises `‖∇L‖²` over the search box by
/// damped Gauss-Newton iterations projected onto the box, started from the
/// observed rates `(n_d, n_p)`.
///
/// When the likelihood has no stationary point inside the box the result is
/// the box point with the smallest residual; `final_residual_norm` is then
/// well above zero and a warning says so.
pub fn estimate_two_sided(
    samples: &GvstCollection,
    n_d: f64,
    n_p: f64,
    capacity_k: usize,
    config: &EstimatorConfig,
) -> Result<EstimationResult> {
    let sum_y = require_nonempty(samples, 2)?;
    if capacity_k < 1 {
        return Err(FqmError::InvalidParameter("capacity must be at least 1".into()));
    }
    let n = samples.len() as f64;
    let bounds = config.bounds(n_d, n_p, n / sum_y)?;
    let residual_tol = config.tol * n;
    let mut warnings = Vec::new();

    let start = bounds.project(Vector2::new(n_d, n_p));
    let mut state = TwoSidedState::evaluate(start, capacity_k, samples, &bounds)?;
    let mut iterations = 0;
    let mut converged = false;

    while iterations < config.max_iters {
        if state.merit < residual_tol || state.projected_descent == 0.0 {
            converged = true;
            break;
        }
        iterations += 1;

        let mut accepted = None;
        for direction in [state.newton_direction(), state.gradient_direction()]
            .into_iter()
            .flatten()
        {
            let mut alpha = 1.0;
            for _ in 0..=MAX_HALVINGS {
                let candidate = bounds.project(state.theta + direction * alpha);
                if candidate != state.theta {
                    let next = TwoSidedState::evaluate(candidate, capacity_k, samples, &bounds)?;
                    if next.merit < state.merit {
                        accepted = Some(next);
                        break;
                    }
                }
                alpha *= 0.5;
            }
            if accepted.is_some() {
                break;
            }
        }

        // no descent left at this precision: a constrained minimum
        let Some(next) = accepted else {
            converged = true;
            break;
        };
        let change = (next.theta - state.theta).component_div(&state.theta).abs().max();
        state = next;
        if change < config.tol {
            converged = true;
            break;
        }
    }

    if !converged {
        warnings.push(format!("no convergence after {} iterations", config.max_iters));
    }
    if state.merit >= residual_tol {
        warnings.push(format!(
            "no interior stationary point: residual {:.3e} exceeds {:.3e}",
            state.merit, residual_tol
        ));
    }
    if state.at_boundary(&bounds) {
        warnings.push("solution lies on the search-box boundary".into());
    }

    Ok(EstimationResult {
        method: EstimationMethod::TwoSided,
        mu_hat: state.theta[1],
        lambda_hat: Some(state.theta[0]),
        iterations,
        converged,
        final_residual_norm: state.merit,
        log_likelihood_at_solution: Some(state.value),
        bounds: Some(bounds),
        warnings,
    })
}
