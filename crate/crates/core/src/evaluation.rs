//! Error metrics, goodness of fit, and the replication harness used for the
//! synthetic benchmark and the sensitivity sweeps.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distribution::{gvst_cdf, sample_gvst, FqmParams};
use crate::error::{FqmError, Result};
use crate::estimators::{
    estimate_one_sided_closed_form, estimate_one_sided_newton, estimate_two_sided, EstimationResult, EstimatorConfig,
};
use crate::gvst::{GvstCollection, UnitObservation};
use crate::simulator::{replicate, SimulationConfig};

pub const KS_MIN_SAMPLES: usize = 10;
pub const DEFAULT_BOOTSTRAP_RESAMPLES: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub rmse: f64,
    /// Fraction, not percent.
    pub mape: f64,
    pub mae: f64,
    pub n: usize,
}

pub fn metrics(estimates: &[f64], truth: f64) -> Result<MetricReport> {
    if estimates.is_empty() {
        return Err(FqmError::EmptySample("no estimates".into()));
    }
    if !(truth.is_finite() && truth > 0.0) {
        return Err(FqmError::InvalidParameter(format!(
            "truth must be positive, got {truth}"
        )));
    }
    let n = estimates.len() as f64;
    let mut sq = 0.0;
    let mut abs = 0.0;
    for &e in estimates {
        let d = e - truth;
        sq += d * d;
        abs += d.abs();
    }
    Ok(MetricReport {
        rmse: (sq / n).sqrt(),
        mape: abs / n / truth,
        mae: abs / n,
        n: estimates.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsReport {
    pub statistic: f64,
    pub p_value: f64,
    pub n: usize,
    pub reject_at_5pct: bool,
    /// Parametric-bootstrap p-value accounting for parameters fitted on the
    /// same sample. Absent unless requested.
    pub bootstrap_p_value: Option<f64>,
}

/// `P(K > x)` for the limiting Kolmogorov distribution.
pub fn kolmogorov_survival(x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x < 1.18 {
        // theta-function form converges fast for small x
        let c = std::f64::consts::PI * std::f64::consts::PI / (8.0 * x * x);
        let mut s = 0.0;
        for k in 1..=100 {
            let m = (2 * k - 1) as f64;
            let term = (-m * m * c).exp();
            s += term;
            if term < 1e-300 {
                break;
            }
        }
        (1.0 - (2.0 * std::f64::consts::PI).sqrt() / x * s).clamp(0.0, 1.0)
    } else {
        let mut s = 0.0;
        for k in 1..=100 {
            let kf = k as f64;
            let term = (-2.0 * kf * kf * x * x).exp();
            s += if k % 2 == 1 { term } else { -term };
            if term < 1e-300 {
                break;
            }
        }
        (2.0 * s).clamp(0.0, 1.0)
    }
}

/// Two-sided one-sample KS statistic of `samples` against `cdf`.
pub fn ks_statistic(samples: &[f64], cdf: impl Fn(f64) -> Result<f64>) -> Result<f64> {
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &y) in sorted.iter().enumerate() {
        let f = cdf(y)?;
        d = d.max((i + 1) as f64 / n - f).max(f - i as f64 / n);
    }
    Ok(d)
}

/// KS test of the survival samples against the law at `params`, with the
/// asymptotic p-value.
pub fn ks_test(samples: &GvstCollection, params: &FqmParams) -> Result<KsReport> {
    params.validate()?;
    if samples.len() < KS_MIN_SAMPLES {
        return Err(FqmError::TooFewSamples {
            needed: KS_MIN_SAMPLES,
            got: samples.len(),
        });
    }
    let d = ks_statistic(samples.samples(), |y| gvst_cdf(params, y))?;
    let n = samples.len();
    let p = kolmogorov_survival((n as f64).sqrt() * d);
    Ok(KsReport {
        statistic: d,
        p_value: p,
        n,
        reject_at_5pct: p < 0.05,
        bootstrap_p_value: None,
    })
}

/// KS test against the two-sided fit on the same sample, with a parametric
/// bootstrap p-value from `resamples` refits on data drawn from the fit.
pub fn ks_test_fitted(
    samples: &GvstCollection,
    n_d: f64,
    n_p: f64,
    capacity_k: usize,
    config: &EstimatorConfig,
    resamples: usize,
    seed: u64,
) -> Result<(EstimationResult, KsReport)> {
    let fit = estimate_two_sided(samples, n_d, n_p, capacity_k, config)?;
    let params = FqmParams::new(fit.lambda_hat.unwrap_or(n_d), fit.mu_hat, capacity_k)?;
    let mut report = ks_test(samples, &params)?;
    if resamples == 0 {
        return Ok((fit, report));
    }
    let n = samples.len();
    let exceed: Vec<bool> = (0..resamples)
        .into_par_iter()
        .map(|b| -> Result<bool> {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(b as u64);
            let draw = GvstCollection::from_samples(sample_gvst(&params, n, &mut rng)?)?;
            let refit = estimate_two_sided(&draw, n_d, n_p, capacity_k, config)?;
            let p = FqmParams::new(refit.lambda_hat.unwrap_or(n_d), refit.mu_hat, capacity_k)?;
            let d = ks_statistic(draw.samples(), |y| gvst_cdf(&p, y))?;
            Ok(d >= report.statistic)
        })
        .collect::<Result<_>>()?;
    let hits = exceed.iter().filter(|&&e| e).count();
    report.bootstrap_p_value = Some((hits + 1) as f64 / (resamples + 1) as f64);
    Ok((fit, report))
}

/// `1 − N_p / (μ̂ T)`, floored at zero.
pub fn stockout_rate(n_p: f64, mu_hat: f64, horizon_t: f64) -> Result<f64> {
    if !(mu_hat.is_finite() && mu_hat > 0.0) {
        return Err(FqmError::InvalidParameter(format!(
            "mu_hat must be positive, got {mu_hat}"
        )));
    }
    if !(horizon_t.is_finite() && horizon_t > 0.0) {
        return Err(FqmError::InvalidParameter(format!(
            "horizon must be positive, got {horizon_t}"
        )));
    }
    let rate = 1.0 - n_p / (mu_hat * horizon_t);
    if rate < 0.0 {
        log::warn!(
            "observed pick-ups {n_p} exceed estimated demand {}; stockout clamped to 0",
            mu_hat * horizon_t
        );
        return Ok(0.0);
    }
    Ok(rate)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OlsFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

pub fn ols_fit(xs: &[f64], ys: &[f64]) -> Result<OlsFit> {
    if xs.len() != ys.len() {
        return Err(FqmError::InvalidParameter(format!(
            "{} x values but {} y values",
            xs.len(),
            ys.len()
        )));
    }
    if xs.len() < 2 {
        return Err(FqmError::TooFewSamples {
            needed: 2,
            got: xs.len(),
        });
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(FqmError::Degenerate("all x values are equal".into()));
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let ss_res: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| {
            let r = y - slope * x - intercept;
            r * r
        })
        .sum();
    // constant y is fitted exactly by a flat line
    let r_squared = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    Ok(OlsFit {
        slope,
        intercept,
        r_squared,
    })
}

/// Mean estimate and error metrics of one method over replications.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub mean_mu_hat: f64,
    pub metrics: MetricReport,
    /// Replications where the estimator returned an error.
    pub failures: usize,
    /// Replications that returned without meeting the stopping rule.
    pub not_converged: usize,
}

impl MethodSummary {
    fn from_results(results: &[&Result<EstimationResult>], truth: f64) -> Result<Self> {
        let ok: Vec<&EstimationResult> = results.iter().filter_map(|r| r.as_ref().ok()).collect();
        let mus: Vec<f64> = ok.iter().map(|r| r.mu_hat).collect();
        let metrics = metrics(&mus, truth)?;
        Ok(Self {
            mean_mu_hat: mus.iter().sum::<f64>() / mus.len() as f64,
            metrics,
            failures: results.len() - ok.len(),
            not_converged: ok.iter().filter(|r| !r.converged).count(),
        })
    }
}

/// One simulated setting evaluated over all replications.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub lambda: f64,
    pub mu: f64,
    pub capacity_k: usize,
    pub gvst_count: Option<usize>,
    pub replications: usize,
    pub two_sided: MethodSummary,
    pub one_sided_closed_form: MethodSummary,
    pub one_sided_newton: MethodSummary,
}

/// All three estimators on one observation.
pub fn estimate_all(
    obs: &UnitObservation,
    capacity_k: usize,
    config: &EstimatorConfig,
) -> [Result<EstimationResult>; 3] {
    let n_d = obs.dropoff_rate();
    let n_p = obs.pickup_rate();
    [
        estimate_two_sided(&obs.gvst, n_d, n_p, capacity_k, config),
        estimate_one_sided_closed_form(&obs.gvst, n_d),
        estimate_one_sided_newton(&obs.gvst, n_d, n_p, capacity_k, config),
    ]
}

/// Runs every replication of `sim` and scores the three estimators against
/// the true `μ`. Replications run in parallel; the result does not depend
/// on scheduling.
pub fn evaluate_setting(sim: &SimulationConfig, config: &EstimatorConfig) -> Result<BenchmarkRow> {
    sim.validate()?;
    config.validate()?;
    if sim.replications < 1 {
        return Err(FqmError::InvalidConfig("replications must be at least 1".into()));
    }
    let per_rep: Vec<[Result<EstimationResult>; 3]> = (0..sim.replications)
        .into_par_iter()
        .map(|r| -> Result<_> {
            let rep = replicate(sim, r)?;
            Ok(estimate_all(&rep.observation, sim.capacity_k, config))
        })
        .collect::<Result<_>>()?;
    let column = |i: usize| -> Vec<&Result<EstimationResult>> { per_rep.iter().map(|row| &row[i]).collect() };
    Ok(BenchmarkRow {
        lambda: sim.true_lambda,
        mu: sim.true_mu,
        capacity_k: sim.capacity_k,
        gvst_count: sim.target_gvst,
        replications: sim.replications,
        two_sided: MethodSummary::from_results(&column(0), sim.true_mu)?,
        one_sided_closed_form: MethodSummary::from_results(&column(1), sim.true_mu)?,
        one_sided_newton: MethodSummary::from_results(&column(2), sim.true_mu)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Capacity,
    GvstCount,
    GridSize,
    Mu,
}

impl SweepAxis {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepAxis::Capacity => "capacity",
            SweepAxis::GvstCount => "gvst_count",
            SweepAxis::GridSize => "grid_size",
            SweepAxis::Mu => "mu",
        }
    }
}

impl std::str::FromStr for SweepAxis {
    type Err = FqmError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "capacity" | "k" => Ok(SweepAxis::Capacity),
            "gvst_count" | "gvst" => Ok(SweepAxis::GvstCount),
            "grid_size" => Ok(SweepAxis::GridSize),
            "mu" => Ok(SweepAxis::Mu),
            other => Err(FqmError::InvalidConfig(format!("unknown sweep axis '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: f64,
    pub row: BenchmarkRow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub axis: SweepAxis,
    pub points: Vec<SweepPoint>,
}

fn apply_axis(base: &SimulationConfig, axis: SweepAxis, value: f64) -> Result<SimulationConfig> {
    let mut cfg = base.clone();
    let as_count = |v: f64| -> Result<usize> {
        if v.is_finite() && v >= 1.0 && v.fract() == 0.0 {
            Ok(v as usize)
        } else {
            Err(FqmError::InvalidConfig(format!(
                "{} values must be positive integers, got {v}",
                axis.as_str()
            )))
        }
    };
    match axis {
        SweepAxis::Capacity => cfg.capacity_k = as_count(value)?,
        SweepAxis::GvstCount => cfg.target_gvst = Some(as_count(value)?),
        SweepAxis::Mu => cfg.true_mu = value,
        SweepAxis::GridSize => {
            return Err(FqmError::Unsupported(
                "grid size only applies to real trip data, not to a simulated unit".into(),
            ))
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Evaluates `base` at each axis value. Points come back sorted by value.
pub fn sweep(
    base: &SimulationConfig,
    axis: SweepAxis,
    values: &[f64],
    config: &EstimatorConfig,
) -> Result<SweepResult> {
    if values.is_empty() {
        return Err(FqmError::InvalidConfig("sweep needs at least one value".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let configs: Vec<SimulationConfig> = sorted
        .iter()
        .map(|&v| apply_axis(base, axis, v))
        .collect::<Result<_>>()?;
    let points = sorted
        .into_iter()
        .zip(configs)
        .map(|(value, cfg)| {
            Ok(SweepPoint {
                value,
                row: evaluate_setting(&cfg, config)?,
            })
        })
        .collect::<Result<_>>()?;
    Ok(SweepResult { axis, points })
}

pub const BENCHMARK_COLUMNS: [&str; 17] = [
    "lambda",
    "mu",
    "k",
    "gvst_count",
    "replications",
    "two_sided_mu_hat",
    "two_sided_rmse",
    "two_sided_mape_pct",
    "two_sided_mae",
    "closed_form_mu_hat",
    "closed_form_rmse",
    "closed_form_mape_pct",
    "closed_form_mae",
    "newton_mu_hat",
    "newton_rmse",
    "newton_mape_pct",
    "newton_mae",
];

/// Writes rows in the synthetic-benchmark table layout. MAPE is in percent.
pub fn write_benchmark_csv<W: Write>(rows: &[BenchmarkRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(BENCHMARK_COLUMNS)?;
    for r in rows {
        let mut rec = vec![
            format!("{}", r.lambda),
            format!("{}", r.mu),
            r.capacity_k.to_string(),
            r.gvst_count.map(|g| g.to_string()).unwrap_or_default(),
            r.replications.to_string(),
        ];
        for m in [&r.two_sided, &r.one_sided_closed_form, &r.one_sided_newton] {
            rec.push(format!("{:.4}", m.mean_mu_hat));
            rec.push(format!("{:.4}", m.metrics.rmse));
            rec.push(format!("{:.4}", 100.0 * m.metrics.mape));
            rec.push(format!("{:.4}", m.metrics.mae));
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
