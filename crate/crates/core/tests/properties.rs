use fqm_core::evaluation::metrics;
use fqm_core::ingestion::{format_timestamp, parse_timestamp, BoundingBox, GridSpec};
use fqm_core::simulator::{simulate_unit, SimulationConfig};
use fqm_core::{
    estimate_one_sided_closed_form, extract_gvst, gvst_cdf, log_likelihood, one_sided_log_likelihood, EventKind,
    EventStream, FqmParams, GvstCollection, Timestamp, Window,
};
use proptest::prelude::*;

fn stream(drops: &[i64], picks: &[i64]) -> EventStream {
    let w = Window::new(Timestamp(0), Timestamp(i64::MAX / 2)).unwrap();
    let mut s = EventStream::empty("u", w);
    for &d in drops {
        s.push(EventKind::Dropoff, Timestamp(d));
    }
    for &p in picks {
        s.push(EventKind::Pickup, Timestamp(p));
    }
    s.sort();
    s
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn likelihood_ignores_sample_order(
        ys in prop::collection::vec(1e-4f64..2.0, 2..40),
        lambda in 0.5f64..50.0,
        mu in 0.5f64..50.0,
        k in 1usize..30,
        rot in 0usize..40,
    ) {
        let p = FqmParams::new(lambda, mu, k).unwrap();
        let mut shuffled = ys.clone();
        let r = rot % ys.len();
        shuffled.rotate_left(r);
        shuffled.reverse();
        let a = log_likelihood(&p, &GvstCollection::from_samples(ys).unwrap()).unwrap();
        let b = log_likelihood(&p, &GvstCollection::from_samples(shuffled).unwrap()).unwrap();
        let tol = |x: f64| 1e-9 * (1.0 + x.abs());
        prop_assert!((a.value - b.value).abs() < tol(a.value));
        prop_assert!((a.grad_lambda - b.grad_lambda).abs() < tol(a.grad_lambda));
        prop_assert!((a.grad_mu - b.grad_mu).abs() < tol(a.grad_mu));
    }

    #[test]
    fn swap_scheme_invariants(
        drops in prop::collection::vec(0i64..1_000_000, 0..60),
        picks in prop::collection::vec(0i64..1_000_000, 0..60),
        shift in 0i64..1_000_000_000,
    ) {
        let s = stream(&drops, &picks);
        let g = extract_gvst(&s);
        prop_assert!(g.len() <= drops.len().min(picks.len()));
        prop_assert!(g.samples().iter().all(|&y| y > 0.0));
        let idx = g.matched_indices();
        for w in idx.windows(2) {
            prop_assert!(w[0].0 < w[1].0 && w[0].1 < w[1].1);
        }
        for (&(i, h), &y) in idx.iter().zip(g.samples()) {
            let gap = s.pickup_times[h - 1].hours_since(s.dropoff_times[i - 1]);
            prop_assert_eq!(gap, y);
        }
        let shifted: (Vec<i64>, Vec<i64>) = (
            drops.iter().map(|d| d + shift).collect(),
            picks.iter().map(|p| p + shift).collect(),
        );
        let g2 = extract_gvst(&stream(&shifted.0, &shifted.1));
        prop_assert_eq!(g.len(), g2.len());
        for (a, b) in g.samples().iter().zip(g2.samples()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn metric_identities(est in prop::collection::vec(0.0f64..500.0, 1..50), truth in 1.0f64..300.0) {
        let m = metrics(&est, truth).unwrap();
        prop_assert!(m.rmse + 1e-12 >= m.mae);
        prop_assert!(m.mae >= 0.0 && m.mape >= 0.0);
        prop_assert!((m.mape * truth - m.mae).abs() < 1e-9 * (1.0 + m.mae));
        let exact = metrics(&vec![truth; est.len()], truth).unwrap();
        prop_assert_eq!((exact.rmse, exact.mae, exact.mape), (0.0, 0.0, 0.0));
        if est.iter().any(|&e| e != truth) {
            prop_assert!(m.rmse > 0.0 && m.mae > 0.0);
        }
    }

    #[test]
    fn cdf_is_a_distribution_function(
        lambda in 0.1f64..300.0,
        mu in 0.1f64..300.0,
        k in 1usize..60,
        a in 0.0f64..5.0,
        b in 0.0f64..5.0,
    ) {
        let p = FqmParams::new(lambda, mu, k).unwrap();
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let (flo, fhi) = (gvst_cdf(&p, lo).unwrap(), gvst_cdf(&p, hi).unwrap());
        prop_assert!((0.0..=1.0).contains(&flo) && (0.0..=1.0).contains(&fhi));
        prop_assert!(flo <= fhi + 1e-15);
    }

    #[test]
    fn one_sided_score_decreases_and_closed_form_exceeds_nd(
        ys in prop::collection::vec(1e-3f64..1.0, 1..30),
        n_d in 0.0f64..80.0,
        k in 1usize..40,
        m1 in 1.0f64..400.0,
        m2 in 1.0f64..400.0,
    ) {
        let g = GvstCollection::from_samples(ys).unwrap();
        let (lo, hi) = if m1 <= m2 { (m1, m2) } else { (m2, m1) };
        prop_assume!(hi - lo > 1e-6);
        let a = one_sided_log_likelihood(lo, n_d, k, &g).unwrap();
        let b = one_sided_log_likelihood(hi, n_d, k, &g).unwrap();
        prop_assert!(a.score > b.score);
        let c = estimate_one_sided_closed_form(&g, n_d).unwrap();
        prop_assert!(c.mu_hat > n_d);
    }

    #[test]
    fn timestamp_text_round_trip(ns in -4_000_000_000_000_000_000i64..4_000_000_000_000_000_000i64) {
        let t = Timestamp(ns);
        prop_assert_eq!(parse_timestamp(&format_timestamp(t), 0).unwrap(), t);
    }

    #[test]
    fn grid_binning_is_total_in_bounds(u in 0.0f64..=1.0, v in 0.0f64..=1.0, size in 50.0f64..2000.0) {
        let bbox = BoundingBox { min_lat: 1.2, min_lon: 103.6, max_lat: 1.5, max_lon: 104.1 };
        let g = GridSpec::new(bbox, size).unwrap();
        let lat = bbox.min_lat + u * (bbox.max_lat - bbox.min_lat);
        let lon = bbox.min_lon + v * (bbox.max_lon - bbox.min_lon);
        let cell = g.cell_of(lat.min(bbox.max_lat), lon.min(bbox.max_lon));
        prop_assert!(cell.is_some());
        let c = cell.unwrap();
        let (x, y) = g.project(lat, lon);
        prop_assert!(c.row >= 0 && c.col >= 0);
        prop_assert!((c.col as f64) * size <= x + 1e-6 && x < (c.col as f64 + 1.0) * size + 1e-6);
        prop_assert!((c.row as f64) * size <= y + 1e-6 && y < (c.row as f64 + 1.0) * size + 1e-6);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn simulated_flows_are_conserved(
        lambda in 1.0f64..200.0,
        mu in 1.0f64..200.0,
        k in 1usize..25,
        seed in any::<u64>(),
        init in 0usize..25,
    ) {
        let cfg = SimulationConfig {
            true_lambda: lambda,
            true_mu: mu,
            capacity_k: k,
            horizon_t: 2.0,
            initial_inventory: init.min(k),
            seed,
            ..Default::default()
        };
        let o = simulate_unit(&cfg).unwrap();
        prop_assert_eq!(o.observed_pickups(), o.true_user_arrivals - o.lost_users);
        prop_assert_eq!(o.observed_dropoffs(), o.true_vehicle_arrivals - o.blocked_vehicles);
        let mut level = init.min(k) as i64;
        for e in &o.observed_events {
            level += if e.kind == EventKind::Dropoff { 1 } else { -1 };
            prop_assert!((0..=k as i64).contains(&level));
        }
        let total: f64 = o.occupancy_hours.iter().sum();
        prop_assert!((total - 2.0).abs() < 1e-9);
    }
}
