use serde_json::Value;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn fqm(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fqm"))
        .args(args)
        .current_dir(dir)
        .env_remove("FQM_SEED")
        .output()
        .expect("run fqm")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = fqm(dir, args);
    assert!(
        out.status.success(),
        "fqm {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn mu_hats(unit: &Value) -> Vec<f64> {
    unit["estimates"]
        .as_array()
        .unwrap()
        .iter()
        .map(|e| e["result"]["mu_hat"].as_f64().unwrap())
        .collect()
}

#[test]
fn simulate_writes_events_truth_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(
        d,
        &[
            "simulate", "--lambda", "100", "--mu", "145", "--k", "20", "--gvst", "300", "--reps", "3", "--seed", "7",
            "--out", "a",
        ],
    );
    for i in 0..3 {
        let text = fs::read_to_string(d.join(format!("a/events_{i:04}.csv"))).unwrap();
        assert!(text.starts_with("vehicle_id,timestamp,event\n"));
        assert!(text.lines().count() > 300);
    }
    let truth = json(&d.join("a/truth.json"));
    let reps = truth["replications"].as_array().unwrap();
    assert_eq!(reps.len(), 3);
    assert!(reps.iter().all(|r| r["n_gvst"] == 300));
    assert_eq!(truth["mu"], 145.0);
    let manifest = json(&d.join("a/manifest.json"));
    assert_eq!(manifest["command"], "simulate");
    assert_eq!(manifest["seed"], 7);
    assert_eq!(manifest["outputs"].as_array().unwrap().len(), 4);
    assert_eq!(truth["run"]["config_digest"], manifest["config_digest"]);
}

#[test]
fn simulate_is_byte_identical_on_rerun_and_across_jobs() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let base = ["simulate", "--mu", "160", "--gvst", "200", "--reps", "4", "--seed", "3"];
    let mut a: Vec<&str> = base.to_vec();
    a.extend(["--out", "a"]);
    let mut b: Vec<&str> = vec!["--jobs", "1"];
    b.extend(base);
    b.extend(["--out", "b"]);
    ok(d, &a);
    ok(d, &b);
    for name in ["events_0000.csv", "events_0003.csv", "truth.json"] {
        let x = fs::read(d.join("a").join(name)).unwrap();
        let y = fs::read(d.join("b").join(name)).unwrap();
        if name == "truth.json" {
            // only the manifest path differs
            let (mut x, mut y) = (json(&d.join("a").join(name)), json(&d.join("b").join(name)));
            x["run"]["manifest"] = Value::Null;
            y["run"]["manifest"] = Value::Null;
            assert_eq!(x, y);
        } else {
            assert_eq!(x, y, "{name}");
        }
    }
    // rerun from the manifest's own config
    ok(d, &["--config", "a/manifest.json", "simulate", "--out", "c"]);
    assert_eq!(
        fs::read(d.join("a/events_0002.csv")).unwrap(),
        fs::read(d.join("c/events_0002.csv")).unwrap()
    );
    assert_eq!(
        json(&d.join("a/manifest.json"))["config_digest"],
        json(&d.join("c/manifest.json"))["config_digest"]
    );
}

#[test]
fn simulate_rejects_non_positive_mu() {
    let tmp = tempfile::tempdir().unwrap();
    let out = fqm(tmp.path(), &["simulate", "--mu", "0", "--out", "x"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("mu must be positive"));
    assert!(!tmp.path().join("x").exists());
}

#[test]
fn usage_and_data_errors_have_distinct_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    assert_eq!(fqm(d, &["frobnicate"]).status.code(), Some(1));
    assert_eq!(
        fqm(d, &["simulate", "--reps", "two", "--out", "x"]).status.code(),
        Some(1)
    );
    assert_eq!(
        fqm(d, &["estimate", "--events", "missing.csv", "--out", "r.json"])
            .status
            .code(),
        Some(2)
    );
    fs::write(d.join("bad.conf"), "colour = red\n").unwrap();
    assert_eq!(
        fqm(d, &["--config", "bad.conf", "simulate", "--out", "x"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(fqm(d, &["--help"]).status.code(), Some(0));
}

#[test]
fn estimate_all_methods_agree_when_users_outpace_vehicles() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(
        d,
        &[
            "simulate", "--mu", "195", "--gvst", "5000", "--seed", "11", "--out", "s",
        ],
    );
    ok(
        d,
        &[
            "estimate",
            "--events",
            "s/events_0000.csv",
            "--method",
            "all",
            "--out",
            "r.json",
        ],
    );
    let r = json(&d.join("r.json"));
    let unit = &r["units"][0];
    assert_eq!(unit["status"], "estimated");
    let mus = mu_hats(unit);
    assert_eq!(mus.len(), 3);
    let hi = mus.iter().cloned().fold(f64::MIN, f64::max);
    let lo = mus.iter().cloned().fold(f64::MAX, f64::min);
    assert!(hi / lo < 1.10, "{mus:?}");
    assert!((mus[0] - 195.0).abs() < 0.1 * 195.0, "{mus:?}");
    for e in unit["estimates"].as_array().unwrap() {
        let s = e["stockout_rate"].as_f64().unwrap();
        assert!((0.0..1.0).contains(&s));
    }
    assert!(unit["n_g"].as_u64().unwrap() >= 5000);
    assert!(unit["ks"]["report"]["p_value"].as_f64().is_some());
    assert!(json(&d.join("r.manifest.json"))["inputs"][0]
        .as_str()
        .unwrap()
        .ends_with("events_0000.csv"));
}

#[test]
fn one_sided_closed_form_hand_example() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fs::write(d.join("y.txt"), "gvst_hours\n0.5\n0.25\n0.25\n").unwrap();
    ok(
        d,
        &[
            "estimate",
            "--samples",
            "y.txt",
            "--n-d",
            "2",
            "--method",
            "one-sided",
            "--out",
            "r.json",
        ],
    );
    let r = json(&d.join("r.json"));
    assert_eq!(mu_hats(&r["units"][0]), vec![5.0]);
}

#[test]
fn empty_inputs_are_skipped_with_a_reason() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fs::write(d.join("empty.csv"), "").unwrap();
    fs::write(d.join("header.csv"), "vehicle_id,timestamp,event\n").unwrap();
    ok(
        d,
        &["simulate", "--mu", "150", "--gvst", "200", "--seed", "2", "--out", "s"],
    );
    ok(
        d,
        &[
            "estimate",
            "--events",
            "empty.csv",
            "header.csv",
            "s/events_0000.csv",
            "--method",
            "one-sided",
            "--out",
            "r.json",
        ],
    );
    let units = json(&d.join("r.json"))["units"].as_array().unwrap().clone();
    assert_eq!(units.len(), 3);
    assert_eq!(units[0]["status"], "skipped");
    assert_eq!(units[0]["reason"], "empty event file");
    assert_eq!(units[1]["status"], "skipped");
    assert_eq!(units[1]["reason"], "no events");
    assert_eq!(units[2]["status"], "estimated");
}

#[test]
fn trip_input_filters_units_by_pickup_ratio() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fs::write(
        d.join("trips.csv"),
        "vehicle_id,start_time,end_time,start_station,end_station\n\
         a,2024-01-01T08:00:00Z,2024-01-01T08:10:00Z,S1,S2\n\
         b,2024-01-01T08:30:00Z,2024-01-01T08:40:00Z,S2,S1\n\
         a,2024-01-01T09:00:00Z,2024-01-01T09:15:00Z,S2,S1\n\
         c,2024-01-01T10:00:00Z,2024-01-01T10:05:00Z,S1,S2\n\
         b,2024-01-01T11:00:00Z,2024-01-01T11:20:00Z,S1,S3\n",
    )
    .unwrap();
    ok(
        d,
        &[
            "estimate",
            "--trips",
            "trips.csv",
            "--method",
            "one-sided",
            "--out",
            "r.json",
        ],
    );
    let units = json(&d.join("r.json"))["units"].as_array().unwrap().clone();
    let ids: Vec<&str> = units.iter().map(|u| u["unit_id"].as_str().unwrap()).collect();
    assert_eq!(ids, ["S1", "S2", "S3"]);
    assert_eq!(units[0]["status"], "estimated");
    assert_eq!(units[2]["status"], "skipped");
    assert!(units[2]["reason"].as_str().unwrap().contains("ratio"));
    // S1: drop-offs at 08:40 and 09:15 meet users at 10:00 and 11:00
    let y = (80.0 + 105.0) / 60.0;
    let n_d = 2.0 / 24.0;
    assert!((mu_hats(&units[0])[0] - (n_d + 2.0 / y)).abs() < 1e-12);
}

#[test]
fn extract_gvst_follows_the_swap_scheme() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fs::write(
        d.join("u.csv"),
        "vehicle_id,timestamp,event\n\
         a,2024-01-01T01:00:00Z,dropoff\n\
         b,2024-01-01T02:00:00Z,dropoff\n\
         a,2024-01-01T03:00:00Z,pickup\n\
         b,2024-01-01T04:00:00Z,pickup\n\
         c,2024-01-01T05:00:00Z,pickup\n\
         c,2024-01-01T06:00:00Z,dropoff\n",
    )
    .unwrap();
    ok(d, &["extract-gvst", "--events", "u.csv", "--out", "g.csv"]);
    let text = fs::read_to_string(d.join("g.csv")).unwrap();
    let ys: Vec<f64> = text
        .lines()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap().parse().unwrap())
        .collect();
    assert_eq!(ys, vec![2.0, 2.0]);
    assert!(d.join("g.manifest.json").exists());
}

#[test]
fn ks_reports_against_given_and_fitted_rates() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(
        d,
        &["simulate", "--mu", "150", "--gvst", "2000", "--seed", "5", "--out", "s"],
    );
    ok(
        d,
        &[
            "ks",
            "--events",
            "s/events_0000.csv",
            "--lambda",
            "100",
            "--mu",
            "150",
            "--out",
            "k.json",
        ],
    );
    let k = json(&d.join("k.json"));
    let p = k["report"]["p_value"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&p));
    assert!(k["report"]["bootstrap_p_value"].is_null());
    ok(
        d,
        &[
            "ks",
            "--events",
            "s/events_0000.csv",
            "--fit",
            "--bootstrap",
            "9",
            "--out",
            "f.json",
        ],
    );
    let f = json(&d.join("f.json"));
    assert!(f["fit"]["mu_hat"].as_f64().is_some());
    let b = f["report"]["bootstrap_p_value"].as_f64().unwrap();
    assert!(b > 0.0 && b <= 1.0);
    assert_eq!(
        fqm(d, &["ks", "--events", "s/events_0000.csv", "--out", "x.json"])
            .status
            .code(),
        Some(1)
    );
}

#[test]
fn config_file_sits_between_flags_and_defaults() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fs::write(
        d.join("run.conf"),
        "# shared settings\nmu = 170\nk = 15\ngvst = 100\nseed = 4\n",
    )
    .unwrap();
    ok(d, &["--config", "run.conf", "simulate", "--k", "12", "--out", "s"]);
    let truth = json(&d.join("s/truth.json"));
    assert_eq!(truth["mu"], 170.0);
    assert_eq!(truth["capacity_k"], 12);
    assert_eq!(truth["lambda"], 100.0);
    assert_eq!(truth["seed"], 4);
}

#[test]
fn seed_falls_back_to_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let run = |seed_env: Option<&str>, extra: &[&str], out: &str| {
        let mut c = Command::new(env!("CARGO_BIN_EXE_fqm"));
        c.current_dir(d).env_remove("FQM_SEED");
        if let Some(s) = seed_env {
            c.env("FQM_SEED", s);
        }
        let mut args = vec!["simulate", "--gvst", "50", "--out", out];
        args.extend(extra);
        assert!(c.args(&args).output().unwrap().status.success());
        json(&d.join(out).join("manifest.json"))["seed"].as_u64().unwrap()
    };
    assert_eq!(run(Some("42"), &[], "a"), 42);
    assert_eq!(run(Some("42"), &["--seed", "8"], "b"), 8);
    assert_eq!(run(None, &[], "c"), 1);
}

#[test]
fn benchmark_validates_and_honours_mu_list() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    assert_eq!(
        fqm(d, &["benchmark", "--reps", "0", "--out", "b.csv"]).status.code(),
        Some(1)
    );
    ok(
        d,
        &[
            "benchmark",
            "--mu-list",
            "145",
            "--reps",
            "4",
            "--gvst",
            "500",
            "--out",
            "b.csv",
        ],
    );
    let text = fs::read_to_string(d.join("b.csv")).unwrap();
    assert_eq!(text.lines().count(), 2);
    assert!(text
        .lines()
        .next()
        .unwrap()
        .starts_with("lambda,mu,k,gvst_count,replications,two_sided_mu_hat"));
    assert!(d.join("b.manifest.json").exists());
}

#[test]
fn benchmark_default_grid_at_fifty_replications() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["benchmark", "--reps", "50", "--seed", "1", "--out", "b.csv"]);
    let mut rdr = csv::Reader::from_path(d.join("b.csv")).unwrap();
    let headers = rdr.headers().unwrap().clone();
    let mape_col = headers.iter().position(|h| h == "two_sided_mape_pct").unwrap();
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 10);
    for row in &rows {
        let mape: f64 = row[mape_col].parse().unwrap();
        assert!(mape < 4.0, "mu={} two-sided MAPE {mape}%", &row[1]);
    }
}

#[test]
fn sweep_writes_sorted_points() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(
        d,
        &[
            "sweep", "--axis", "capacity", "--values", "40,20", "--reps", "3", "--gvst", "300", "--out", "s.json",
        ],
    );
    let s = json(&d.join("s.json"));
    assert_eq!(s["axis"], "capacity");
    let values: Vec<f64> = s["points"]
        .as_array()
        .unwrap()
        .iter()
        .map(|p| p["value"].as_f64().unwrap())
        .collect();
    assert_eq!(values, vec![20.0, 40.0]);
    assert_eq!(s["points"][1]["row"]["capacity_k"], 40);
    assert_eq!(
        fqm(
            d,
            &["sweep", "--axis", "grid-size", "--values", "500", "--out", "g.json"]
        )
        .status
        .code(),
        Some(1)
    );
}
