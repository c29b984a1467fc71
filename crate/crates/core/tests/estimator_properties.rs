use fqm_core::evaluation::{estimate_all, metrics};
use fqm_core::simulator::{replicate, SimulationConfig};
use fqm_core::{estimate_two_sided, EstimatorConfig, GvstCollection};
use proptest::prelude::*;
use rayon::prelude::*;

const SEED: u64 = 424242;
const REPS: usize = 200;

/// Per-replication (two-sided, closed form, Newton) estimates of mu.
fn estimates(mu: f64) -> Vec<[f64; 3]> {
    let sim = SimulationConfig::benchmark(mu, SEED);
    let cfg = EstimatorConfig::default();
    (0..REPS)
        .into_par_iter()
        .map(|r| {
            let rep = replicate(&sim, r).unwrap();
            let [a, b, c] = estimate_all(&rep.observation, sim.capacity_k, &cfg);
            [a.unwrap().mu_hat, b.unwrap().mu_hat, c.unwrap().mu_hat]
        })
        .collect()
}

fn column(rows: &[[f64; 3]], i: usize) -> Vec<f64> {
    rows.iter().map(|r| r[i]).collect()
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn skewness(xs: &[f64]) -> f64 {
    let m = mean(xs);
    let n = xs.len() as f64;
    let m2 = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    let m3 = xs.iter().map(|x| (x - m).powi(3)).sum::<f64>() / n;
    m3 / m2.powf(1.5)
}

#[test]
fn closed_form_overestimates_near_balance() {
    for mu in [105.0, 115.0, 135.0] {
        let rows = estimates(mu);
        let (cf, bl) = (mean(&column(&rows, 1)), mean(&column(&rows, 2)));
        assert!(cf >= bl, "mu={mu}: closed form {cf} below Newton {bl}");
        if mu <= 115.0 {
            assert!(cf > mu, "mu={mu}: closed form mean {cf} not above truth");
        }
    }
}

#[test]
fn estimates_converge_when_users_outpace_vehicles() {
    for mu in [145.0, 195.0] {
        let rows = estimates(mu);
        for (i, name) in [(0, "two-sided"), (2, "newton")] {
            let m = metrics(&column(&rows, i), mu).unwrap();
            assert!(m.mape < 0.03, "mu={mu} {name}: MAPE {:.4}", m.mape);
        }
    }
}

#[test]
fn two_sided_estimates_are_roughly_symmetric() {
    let s = skewness(&column(&estimates(145.0), 0));
    assert!(s.abs() < 0.5, "two-sided skewness {s}");
}

#[test]
fn two_sided_is_deterministic() {
    let sim = SimulationConfig::benchmark(150.0, 9);
    let obs = replicate(&sim, 3).unwrap().observation;
    let cfg = EstimatorConfig::default();
    let a = estimate_two_sided(&obs.gvst, obs.dropoff_rate(), obs.pickup_rate(), 20, &cfg).unwrap();
    let b = estimate_two_sided(&obs.gvst, obs.dropoff_rate(), obs.pickup_rate(), 20, &cfg).unwrap();
    assert_eq!(a.mu_hat.to_bits(), b.mu_hat.to_bits());
    assert_eq!(a.lambda_hat.map(f64::to_bits), b.lambda_hat.map(f64::to_bits));
    assert_eq!(a.iterations, b.iterations);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn two_sided_stays_in_the_box(
        ys in prop::collection::vec(1e-3f64..0.5, 2..60),
        n_d in 1.0f64..150.0,
        ratio in 0.5f64..1.5,
        k in 1usize..30,
    ) {
        let g = GvstCollection::from_samples(ys).unwrap();
        let n_p = n_d * ratio;
        if let Ok(r) = estimate_two_sided(&g, n_d, n_p, k, &EstimatorConfig::default()) {
            let b = r.bounds.unwrap();
            prop_assert!(b.contains(r.lambda_hat.unwrap(), r.mu_hat), "{:?} outside {:?}", (r.lambda_hat, r.mu_hat), b);
            prop_assert!(r.mu_hat.is_finite() && r.final_residual_norm.is_finite());
        }
    }
}
