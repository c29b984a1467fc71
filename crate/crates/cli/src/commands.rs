use crate::args::{
    BenchmarkArgs, EstimateArgs, ExtractArgs, Extraction, KsArgs, Method, SimArgs, SimulateArgs, SolverArgs, SweepArgs,
    TripArgs, WindowArgs,
};
use crate::error::{CliError, CliResult};
use crate::manifest::{sidecar_path, Command, Run, RunRef};
use crate::settings::{ConfigFile, Resolver};
use fqm_core::evaluation::{
    evaluate_setting, ks_test, ks_test_fitted, stockout_rate, sweep, write_benchmark_csv, KsReport, SweepAxis,
    SweepResult,
};
use fqm_core::ingestion::{
    aggregate_windows, filter_units, format_timestamp, infer_capacities, parse_timestamp, parse_trips_path,
    read_events_path, to_event_streams, write_events, BoundingBox, GridSpec, Location, ParseReport, TripSchema,
    UnitWindow, DEFAULT_CELL_SIZE_M, DEFAULT_MIN_PICKUP_RATIO,
};
use fqm_core::simulator::{run_protocol, GvstExtraction, SimulationConfig};
use fqm_core::{
    estimate_one_sided_closed_form, estimate_one_sided_newton, estimate_two_sided, extract_gvst, split_events,
    EstimationMethod, EstimationResult, EstimatorConfig, FqmParams, GvstCollection, Timestamp, TripEvent,
    UnitObservation, Window,
};
use rayon::prelude::*;
use serde::Serialize;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

const NANOS_PER_HOUR: i64 = 3_600_000_000_000;
const DEFAULT_BENCHMARK_MUS: [f64; 10] = [105.0, 115.0, 125.0, 135.0, 145.0, 155.0, 165.0, 175.0, 185.0, 195.0];

struct SimDefaults {
    mu: f64,
    reps: usize,
    gvst: usize,
}

fn resolve_sim(r: &mut Resolver, a: &SimArgs, d: SimDefaults) -> CliResult<SimulationConfig> {
    let base = SimulationConfig::default();
    let extraction = match r.value("extraction", a.extraction, Extraction::Continuous)? {
        Extraction::Continuous => GvstExtraction::Continuous,
        Extraction::PerWindow => GvstExtraction::PerWindow,
    };
    Ok(SimulationConfig {
        true_lambda: r.value("lambda", a.lambda, base.true_lambda)?,
        true_mu: r.value("mu", a.mu, d.mu)?,
        capacity_k: r.value("k", a.k, base.capacity_k)?,
        horizon_t: r.value("horizon", a.horizon, base.horizon_t)?,
        initial_inventory: r.value("initial_inventory", a.initial_inventory, base.initial_inventory)?,
        replications: r.value("reps", a.reps, d.reps)?,
        seed: r.seed(a.seed)?,
        target_gvst: Some(r.value("gvst", a.gvst, d.gvst)?),
        extraction,
        warmup_hours: r.value("warmup", a.warmup, base.warmup_hours)?,
        ..base
    })
}

fn resolve_solver(r: &mut Resolver, a: &SolverArgs) -> CliResult<EstimatorConfig> {
    let base = EstimatorConfig::default();
    let cfg = EstimatorConfig {
        lambda_lower: r.optional("lambda_lower", a.lambda_lower)?,
        lambda_upper: r.optional("lambda_upper", a.lambda_upper)?,
        mu_lower: r.optional("mu_lower", a.mu_lower)?,
        mu_upper: r.optional("mu_upper", a.mu_upper)?,
        tol: r.value("tol", a.tol, base.tol)?,
        max_iters: r.value("max_iters", a.max_iters, base.max_iters)?,
        ..base
    };
    cfg.validate()?;
    Ok(cfg)
}

fn require_reps(sim: &SimulationConfig) -> CliResult<()> {
    if sim.replications < 1 {
        return Err(CliError::usage("reps must be at least 1"));
    }
    sim.validate()?;
    Ok(())
}

fn log_report(path: &Path, report: &ParseReport) {
    if report.skipped > 0 {
        log::warn!(
            "{}: skipped {} of {} rows",
            path.display(),
            report.skipped,
            report.rows + report.skipped
        );
        for (line, reason) in &report.reasons {
            log::info!("{}:{line}: {reason}", path.display());
        }
    }
}

fn unit_id_of(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

/// Events span widened outward to whole hours.
fn auto_window(events: &[TripEvent]) -> CliResult<Window> {
    let lo = events.iter().map(|e| e.timestamp.0).min();
    let hi = events.iter().map(|e| e.timestamp.0).max();
    let (Some(lo), Some(hi)) = (lo, hi) else {
        return Err(CliError::data("no events"));
    };
    let start = lo.div_euclid(NANOS_PER_HOUR) * NANOS_PER_HOUR;
    let end = (hi + 1 + NANOS_PER_HOUR - 1).div_euclid(NANOS_PER_HOUR) * NANOS_PER_HOUR;
    Ok(Window::new(Timestamp(start), Timestamp(end))?)
}

fn resolve_window(r: &mut Resolver, a: &WindowArgs, utc: i32, events: &[TripEvent]) -> CliResult<Window> {
    let start = r.optional("window_start", a.window_start.clone())?;
    let end = r.optional("window_end", a.window_end.clone())?;
    if start.is_none() && end.is_none() {
        return auto_window(events);
    }
    let auto = auto_window(events).ok();
    let pick = |text: Option<String>, fallback: Option<Timestamp>, what: &str| -> CliResult<Timestamp> {
        match text {
            Some(t) => Ok(parse_timestamp(&t, utc).map_err(|e| CliError::usage(format!("{what}: {e}")))?),
            None => fallback.ok_or_else(|| CliError::usage(format!("{what} is required when there are no events"))),
        }
    };
    let s = pick(start, auto.map(|w| w.start), "window_start")?;
    let e = pick(end, auto.map(|w| w.end), "window_end")?;
    Window::new(s, e).map_err(|e| CliError::usage(e.to_string()))
}

// ---------------------------------------------------------------- simulate

#[derive(Serialize)]
struct TruthReplication {
    index: usize,
    events_file: String,
    seed: u64,
    stream: u64,
    window_start: String,
    window_end: String,
    windows: usize,
    hours: f64,
    n_dropoffs: u64,
    n_pickups: u64,
    n_gvst: usize,
    true_user_arrivals: u64,
    true_vehicle_arrivals: u64,
    lost_users: u64,
    blocked_vehicles: u64,
}

#[derive(Serialize)]
struct Truth {
    run: RunRef,
    lambda: f64,
    mu: f64,
    capacity_k: usize,
    horizon_hours: f64,
    target_gvst: Option<usize>,
    extraction: GvstExtraction,
    seed: u64,
    replications: Vec<TruthReplication>,
}

pub fn simulate(a: &SimulateArgs, file: &ConfigFile) -> CliResult<()> {
    let mut r = Resolver::new(file);
    let sim = resolve_sim(
        &mut r,
        &a.sim,
        SimDefaults {
            mu: 150.0,
            reps: 1,
            gvst: 5000,
        },
    )?;
    require_reps(&sim)?;
    std::fs::create_dir_all(&a.out)?;
    let mut run = Run::new(
        Command::Simulate,
        r.into_resolved(),
        Some(sim.seed),
        vec![],
        a.out.join("manifest.json"),
    );
    let reps = run_protocol(&sim)?;
    let width = reps.len().saturating_sub(1).to_string().len().max(4);
    let mut truth = Vec::with_capacity(reps.len());
    for rep in &reps {
        let name = format!("events_{:0width$}.csv", rep.index);
        let mut buf = Vec::new();
        write_events(&rep.outcome.observed_events, &mut buf)?;
        run.write(&a.out.join(&name), &buf)?;
        let o = &rep.outcome;
        let span = (o.windows.first(), o.windows.last());
        let (Some(first), Some(last)) = span else {
            return Err(CliError::Numerical("replication recorded no windows".into()));
        };
        truth.push(TruthReplication {
            index: rep.index,
            events_file: name,
            seed: o.seed,
            stream: o.stream,
            window_start: format_timestamp(first.start),
            window_end: format_timestamp(last.end),
            windows: o.windows.len(),
            hours: o.observed_hours(),
            n_dropoffs: o.observed_dropoffs(),
            n_pickups: o.observed_pickups(),
            n_gvst: rep.observation.gvst.len(),
            true_user_arrivals: o.true_user_arrivals,
            true_vehicle_arrivals: o.true_vehicle_arrivals,
            lost_users: o.lost_users,
            blocked_vehicles: o.blocked_vehicles,
        });
    }
    let doc = Truth {
        run: run.reference(),
        lambda: sim.true_lambda,
        mu: sim.true_mu,
        capacity_k: sim.capacity_k,
        horizon_hours: sim.horizon_t,
        target_gvst: sim.target_gvst,
        extraction: sim.extraction,
        seed: sim.seed,
        replications: truth,
    };
    run.write_json(&a.out.join("truth.json"), &doc)?;
    run.finish()?;
    let hours: f64 = doc.replications.iter().map(|t| t.hours).sum();
    let lost: u64 = doc.replications.iter().map(|t| t.lost_users).sum();
    let users: u64 = doc.replications.iter().map(|t| t.true_user_arrivals).sum();
    println!(
        "simulated {} replication(s), {:.0} hours, user loss {:.4}, written to {}",
        doc.replications.len(),
        hours,
        if users > 0 { lost as f64 / users as f64 } else { 0.0 },
        a.out.display()
    );
    Ok(())
}

// ------------------------------------------------------------ extract-gvst

pub fn extract(a: &ExtractArgs, file: &ConfigFile) -> CliResult<()> {
    let mut r = Resolver::new(file);
    let utc = r.value("utc_offset", a.window.utc_offset, 0)?;
    let (events, report) = read_events_path(&a.events, utc)?;
    log_report(&a.events, &report);
    let window = resolve_window(&mut r, &a.window, utc, &events)?;
    let id = unit_id_of(&a.events);
    let stream = split_events(&id, &events, window);
    let gvst = extract_gvst(&stream);
    let mut run = Run::new(
        Command::ExtractGvst,
        r.into_resolved(),
        None,
        vec![a.events.display().to_string()],
        sidecar_path(&a.out),
    );
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "dropoff_index",
        "pickup_index",
        "dropoff_time",
        "pickup_time",
        "gvst_hours",
    ])
    .map_err(|e| CliError::data(e.to_string()))?;
    for (&(i, h), &y) in gvst.matched_indices().iter().zip(gvst.samples()) {
        w.write_record([
            i.to_string(),
            h.to_string(),
            format_timestamp(stream.dropoff_times[i - 1]),
            format_timestamp(stream.pickup_times[h - 1]),
            y.to_string(),
        ])
        .map_err(|e| CliError::data(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::data(e.to_string()))?;
    run.write(&a.out, &bytes)?;
    run.finish()?;
    let hours = window.hours();
    println!(
        "{id}: window {} to {} ({hours} h), {} drop-offs, {} pick-ups, {} survival samples",
        format_timestamp(window.start),
        format_timestamp(window.end),
        stream.n_dropoffs(),
        stream.n_pickups(),
        gvst.len()
    );
    Ok(())
}

// ---------------------------------------------------------------- estimate

#[derive(Debug, Clone, Serialize)]
struct MethodRecord {
    method: EstimationMethod,
    #[serde(skip_serializing_if = "Option::is_none")]
    result: Option<EstimationResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
    /// `1 − N_p/μ`, against this method's estimate.
    #[serde(skip_serializing_if = "Option::is_none")]
    stockout_rate: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
struct KsRecord {
    lambda: f64,
    mu: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    report: Option<KsReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
enum UnitStatus {
    Estimated,
    Failed,
    Skipped,
}

#[derive(Debug, Clone, Serialize)]
struct UnitRecord {
    unit_id: String,
    status: UnitStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    reason: Option<String>,
    capacity_k: Option<usize>,
    n_dropoffs: Option<usize>,
    n_pickups: Option<usize>,
    hours: Option<f64>,
    /// Observed drop-off rate per hour.
    n_d: Option<f64>,
    /// Observed pick-up rate per hour.
    n_p: Option<f64>,
    n_g: usize,
    estimates: Vec<MethodRecord>,
    #[serde(skip_serializing_if = "Option::is_none")]
    ks: Option<KsRecord>,
}

impl UnitRecord {
    fn skipped(unit_id: String, reason: impl Into<String>) -> Self {
        Self {
            unit_id,
            status: UnitStatus::Skipped,
            reason: Some(reason.into()),
            capacity_k: None,
            n_dropoffs: None,
            n_pickups: None,
            hours: None,
            n_d: None,
            n_p: None,
            n_g: 0,
            estimates: Vec::new(),
            ks: None,
        }
    }
}

struct UnitData {
    unit_id: String,
    gvst: GvstCollection,
    n_dropoffs: Option<usize>,
    n_pickups: Option<usize>,
    hours: Option<f64>,
    n_d: f64,
    n_p: Option<f64>,
    capacity_k: usize,
}

impl UnitData {
    fn from_observation(unit_id: String, obs: UnitObservation, capacity_k: usize) -> Self {
        Self {
            unit_id,
            n_dropoffs: Some(obs.n_dropoffs),
            n_pickups: Some(obs.n_pickups),
            hours: Some(obs.hours),
            n_d: obs.dropoff_rate(),
            n_p: Some(obs.pickup_rate()),
            gvst: obs.gvst,
            capacity_k,
        }
    }
}

enum Prepared {
    Ready(UnitData),
    Skipped(UnitRecord),
}

#[derive(Serialize)]
struct EstimateOutput {
    run: RunRef,
    method: String,
    units: Vec<UnitRecord>,
}

struct EstimateSettings {
    methods: Vec<EstimationMethod>,
    solver: EstimatorConfig,
    bootstrap: usize,
    seed: u64,
}

fn methods_for(m: Method) -> Vec<EstimationMethod> {
    match m {
        Method::TwoSided => vec![EstimationMethod::TwoSided],
        Method::OneSided => vec![EstimationMethod::OneSidedClosedForm],
        Method::Newton => vec![EstimationMethod::OneSidedNewton],
        Method::All => vec![
            EstimationMethod::TwoSided,
            EstimationMethod::OneSidedClosedForm,
            EstimationMethod::OneSidedNewton,
        ],
    }
}

fn run_method(m: EstimationMethod, u: &UnitData, cfg: &EstimatorConfig) -> fqm_core::Result<EstimationResult> {
    match m {
        EstimationMethod::TwoSided => {
            let n_p = u.n_p.ok_or_else(|| {
                fqm_core::FqmError::InvalidConfig("two-sided estimation needs the pick-up rate".into())
            })?;
            estimate_two_sided(&u.gvst, u.n_d, n_p, u.capacity_k, cfg)
        }
        EstimationMethod::OneSidedClosedForm => estimate_one_sided_closed_form(&u.gvst, u.n_d),
        EstimationMethod::OneSidedNewton => {
            estimate_one_sided_newton(&u.gvst, u.n_d, u.n_p.unwrap_or(u.n_d), u.capacity_k, cfg)
        }
    }
}

fn ks_for(u: &UnitData, estimates: &[MethodRecord], s: &EstimateSettings) -> Option<KsRecord> {
    if s.bootstrap > 0 {
        if let (Some(n_p), true) = (u.n_p, s.methods.contains(&EstimationMethod::TwoSided)) {
            return Some(
                match ks_test_fitted(&u.gvst, u.n_d, n_p, u.capacity_k, &s.solver, s.bootstrap, s.seed) {
                    Ok((fit, report)) => KsRecord {
                        lambda: fit.lambda_hat.unwrap_or(u.n_d),
                        mu: fit.mu_hat,
                        report: Some(report),
                        error: None,
                    },
                    Err(e) => KsRecord {
                        lambda: f64::NAN,
                        mu: f64::NAN,
                        report: None,
                        error: Some(e.to_string()),
                    },
                },
            );
        }
    }
    // prefer the two-sided fit; one-sided fits take λ = N_d
    let order = [
        EstimationMethod::TwoSided,
        EstimationMethod::OneSidedNewton,
        EstimationMethod::OneSidedClosedForm,
    ];
    let fit = order.iter().find_map(|m| {
        estimates
            .iter()
            .find(|e| e.method == *m)
            .and_then(|e| e.result.as_ref())
    })?;
    let lambda = fit.lambda_hat.unwrap_or(u.n_d);
    let outcome = FqmParams::new(lambda, fit.mu_hat, u.capacity_k).and_then(|p| ks_test(&u.gvst, &p));
    Some(match outcome {
        Ok(report) => KsRecord {
            lambda,
            mu: fit.mu_hat,
            report: Some(report),
            error: None,
        },
        Err(e) => KsRecord {
            lambda,
            mu: fit.mu_hat,
            report: None,
            error: Some(e.to_string()),
        },
    })
}

fn estimate_unit(u: UnitData, s: &EstimateSettings) -> UnitRecord {
    let estimates: Vec<MethodRecord> = s
        .methods
        .iter()
        .map(|&m| match run_method(m, &u, &s.solver) {
            Ok(res) => MethodRecord {
                method: m,
                stockout_rate: u.n_p.and_then(|n_p| stockout_rate(n_p, res.mu_hat, 1.0).ok()),
                result: Some(res),
                error: None,
            },
            Err(e) => MethodRecord {
                method: m,
                result: None,
                error: Some(e.to_string()),
                stockout_rate: None,
            },
        })
        .collect();
    let ok = estimates.iter().any(|e| e.result.is_some());
    let ks = if ok { ks_for(&u, &estimates, s) } else { None };
    UnitRecord {
        status: if ok { UnitStatus::Estimated } else { UnitStatus::Failed },
        reason: if ok {
            None
        } else {
            estimates.iter().find_map(|e| e.error.clone())
        },
        unit_id: u.unit_id,
        capacity_k: Some(u.capacity_k),
        n_dropoffs: u.n_dropoffs,
        n_pickups: u.n_pickups,
        hours: u.hours,
        n_d: Some(u.n_d),
        n_p: u.n_p,
        n_g: u.gvst.len(),
        estimates,
        ks,
    }
}

fn ratio_check(unit_id: String, obs: UnitObservation, min_ratio: f64, capacity_k: usize) -> Prepared {
    let mut single = BTreeMap::new();
    single.insert(unit_id.clone(), obs);
    let mut f = filter_units(single, min_ratio);
    match f.excluded.pop() {
        Some(ex) => {
            let mut rec = UnitRecord::skipped(unit_id, ex.reason);
            rec.n_dropoffs = Some(ex.n_dropoffs);
            rec.n_pickups = Some(ex.n_pickups);
            Prepared::Skipped(rec)
        }
        None => {
            let obs = f.retained.remove(&unit_id).unwrap_or_default();
            Prepared::Ready(UnitData::from_observation(unit_id, obs, capacity_k))
        }
    }
}

fn prepare_event_files(
    r: &mut Resolver,
    paths: &[PathBuf],
    window: &WindowArgs,
    capacity_k: usize,
    min_ratio: f64,
) -> CliResult<Vec<Prepared>> {
    let utc = r.value("utc_offset", window.utc_offset, 0)?;
    let mut out = Vec::with_capacity(paths.len());
    let mut seen = BTreeMap::new();
    for path in paths {
        let mut id = unit_id_of(path);
        let n = seen.entry(id.clone()).or_insert(0usize);
        *n += 1;
        if *n > 1 {
            id = path.display().to_string();
        }
        let meta = std::fs::metadata(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
        if meta.len() == 0 {
            out.push(Prepared::Skipped(UnitRecord::skipped(id, "empty event file")));
            continue;
        }
        let (events, report) =
            read_events_path(path, utc).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
        log_report(path, &report);
        if events.is_empty() {
            out.push(Prepared::Skipped(UnitRecord::skipped(id, "no events")));
            continue;
        }
        let w = resolve_window(r, window, utc, &events)?;
        let obs = UnitObservation::from_stream(&split_events(&id, &events, w));
        out.push(ratio_check(id, obs, min_ratio, capacity_k));
    }
    Ok(out)
}

fn location_points(trips: &[fqm_core::ingestion::TripRow]) -> impl Iterator<Item = (f64, f64)> + '_ {
    trips.iter().flat_map(|t| [&t.start, &t.end]).filter_map(|l| match l {
        Location::Point { lat, lon } => Some((*lat, *lon)),
        Location::Station(_) => None,
    })
}

fn prepare_trips(
    r: &mut Resolver,
    path: &Path,
    a: &TripArgs,
    window: &WindowArgs,
    capacity_k: Option<usize>,
    min_ratio: f64,
) -> CliResult<Vec<Prepared>> {
    let utc = r.value("utc_offset", window.utc_offset, 0)?;
    let schema_text = r.value("schema", a.schema.clone(), "station".to_string())?;
    let schema: TripSchema = schema_text.parse()?;
    let (trips, report) =
        parse_trips_path(path, schema, utc).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    log_report(path, &report);
    if trips.is_empty() {
        return Err(CliError::data(format!("{}: no usable trips", path.display())));
    }

    let grid = match schema {
        TripSchema::Station => None,
        TripSchema::Dockless => {
            let size = r.value("grid_size", a.grid_size, DEFAULT_CELL_SIZE_M)?;
            let bbox = match r.list("bbox", a.bbox.clone())? {
                Some(b) if b.len() == 4 => BoundingBox {
                    min_lat: b[0],
                    min_lon: b[1],
                    max_lat: b[2],
                    max_lon: b[3],
                },
                Some(_) => return Err(CliError::usage("bbox needs min_lat,min_lon,max_lat,max_lon")),
                None => {
                    let mut b = BoundingBox {
                        min_lat: f64::INFINITY,
                        min_lon: f64::INFINITY,
                        max_lat: f64::NEG_INFINITY,
                        max_lon: f64::NEG_INFINITY,
                    };
                    for (lat, lon) in location_points(&trips) {
                        b.min_lat = b.min_lat.min(lat);
                        b.min_lon = b.min_lon.min(lon);
                        b.max_lat = b.max_lat.max(lat);
                        b.max_lon = b.max_lon.max(lon);
                    }
                    b
                }
            };
            Some(GridSpec::new(bbox, size)?)
        }
    };

    let first = trips.iter().map(|t| t.start_time.0).min().unwrap_or(0);
    let last = trips.iter().map(|t| t.end_time.0).max().unwrap_or(first);
    let day = 24 * NANOS_PER_HOUR;
    let start = match r.optional("start", a.start.clone())? {
        Some(s) => parse_timestamp(&s, utc).map_err(|e| CliError::usage(format!("start: {e}")))?,
        None => Timestamp(first.div_euclid(day) * day),
    };
    let window_hours = r.value("window_hours", a.window_hours, 24.0)?;
    let default_days = ((last - start.0).max(0) / day + 1) as usize;
    let days = r.value("days", a.days, default_days)?;
    if days < 1 {
        return Err(CliError::usage("days must be at least 1"));
    }

    let inferred = infer_capacities(&trips, grid.as_ref());
    let unit_ids: Vec<String> = match r.list("units", a.units.clone())? {
        Some(ids) => ids,
        None => inferred.keys().cloned().collect(),
    };
    let mut units = Vec::with_capacity(unit_ids.len() * days);
    for id in &unit_ids {
        let k = capacity_k.or_else(|| inferred.get(id).copied()).unwrap_or(1);
        for d in 0..days {
            let s = Timestamp(start.0 + d as i64 * day);
            units.push(UnitWindow::new(
                id.clone(),
                Window::new(s, s.plus_hours(window_hours))?,
                k,
            )?);
        }
    }
    let build = to_event_streams(&trips, &units, grid.as_ref())?;
    if build.out_of_bounds > 0 {
        log::warn!("{} trip endpoints fell outside the grid", build.out_of_bounds);
    }
    let mut observed = aggregate_windows(&build.streams);
    let mut out = Vec::with_capacity(unit_ids.len());
    for id in unit_ids {
        let k = capacity_k.or_else(|| inferred.get(&id).copied()).unwrap_or(1);
        let obs = observed.remove(&id).unwrap_or_default();
        out.push(ratio_check(id, obs, min_ratio, k));
    }
    Ok(out)
}

/// One survival time per line; with several CSV columns the last one is used.
fn read_samples(path: &Path) -> CliResult<Vec<f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    let mut first = true;
    for (n, line) in text.lines().enumerate() {
        let field = line.rsplit(',').next().unwrap_or("").trim();
        if field.is_empty() {
            continue;
        }
        match field.parse::<f64>() {
            Ok(v) => out.push(v),
            Err(_) if first => {}
            Err(_) => {
                return Err(CliError::data(format!(
                    "{}:{}: bad sample '{field}'",
                    path.display(),
                    n + 1
                )))
            }
        }
        first = false;
    }
    Ok(out)
}

fn prepare_samples(r: &mut Resolver, a: &EstimateArgs, path: &Path, capacity_k: usize) -> CliResult<Vec<Prepared>> {
    let n_d = r
        .optional("n_d", a.n_d)?
        .ok_or_else(|| CliError::usage("--samples needs --n-d"))?;
    let n_p = r.optional("n_p", a.n_p)?;
    let id = unit_id_of(path);
    let ys = read_samples(path)?;
    if ys.is_empty() {
        return Ok(vec![Prepared::Skipped(UnitRecord::skipped(id, "no survival samples"))]);
    }
    let gvst = GvstCollection::from_samples(ys).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    Ok(vec![Prepared::Ready(UnitData {
        unit_id: id,
        gvst,
        n_dropoffs: None,
        n_pickups: None,
        hours: None,
        n_d,
        n_p,
        capacity_k,
    })])
}

pub fn estimate(a: &EstimateArgs, file: &ConfigFile) -> CliResult<()> {
    let mut r = Resolver::new(file);
    let method = r.value("method", a.method, Method::TwoSided)?;
    let min_ratio = r.value("min_ratio", a.min_ratio, DEFAULT_MIN_PICKUP_RATIO)?;
    let bootstrap = r.value("bootstrap", a.bootstrap, 0usize)?;
    let seed = r.seed(a.seed)?;
    let solver = resolve_solver(&mut r, &a.solver)?;
    let k_flag = r.optional("k", a.k)?;
    if k_flag == Some(0) {
        return Err(CliError::usage("capacity must be at least 1"));
    }
    let default_k = SimulationConfig::default().capacity_k;

    let (inputs, prepared) = if let Some(trips) = &a.trips {
        (
            vec![trips.display().to_string()],
            prepare_trips(&mut r, trips, &a.trip, &a.window, k_flag, min_ratio)?,
        )
    } else if let Some(samples) = &a.samples {
        (
            vec![samples.display().to_string()],
            prepare_samples(&mut r, a, samples, k_flag.unwrap_or(default_k))?,
        )
    } else if !a.events.is_empty() {
        (
            a.events.iter().map(|p| p.display().to_string()).collect(),
            prepare_event_files(&mut r, &a.events, &a.window, k_flag.unwrap_or(default_k), min_ratio)?,
        )
    } else {
        return Err(CliError::usage("give --events, --trips or --samples"));
    };

    let settings = EstimateSettings {
        methods: methods_for(method),
        solver,
        bootstrap,
        seed,
    };
    let units: Vec<UnitRecord> = prepared
        .into_par_iter()
        .map(|p| match p {
            Prepared::Ready(u) => estimate_unit(u, &settings),
            Prepared::Skipped(rec) => rec,
        })
        .collect();

    let mut run = Run::new(
        Command::Estimate,
        r.into_resolved(),
        Some(seed),
        inputs,
        sidecar_path(&a.out),
    );
    let doc = EstimateOutput {
        run: run.reference(),
        method: method.to_string(),
        units,
    };
    run.write_json(&a.out, &doc)?;
    run.finish()?;

    for u in &doc.units {
        match u.status {
            UnitStatus::Skipped | UnitStatus::Failed => {
                println!(
                    "{}: {}: {}",
                    u.unit_id,
                    format!("{:?}", u.status).to_lowercase(),
                    u.reason.as_deref().unwrap_or("")
                )
            }
            UnitStatus::Estimated => {
                let parts: Vec<String> = u
                    .estimates
                    .iter()
                    .map(|e| match &e.result {
                        Some(res) => format!("{} mu={:.4}", e.method.as_str(), res.mu_hat),
                        None => format!("{} failed", e.method.as_str()),
                    })
                    .collect();
                println!("{}: N_g={} {}", u.unit_id, u.n_g, parts.join(", "));
            }
        }
    }
    let attempted = doc.units.iter().filter(|u| u.status != UnitStatus::Skipped).count();
    let failed = doc.units.iter().filter(|u| u.status == UnitStatus::Failed).count();
    if attempted > 0 && failed == attempted {
        return Err(CliError::Numerical(format!(
            "estimation failed for all {attempted} unit(s)"
        )));
    }
    Ok(())
}

// --------------------------------------------------------------- benchmark

pub fn benchmark(a: &BenchmarkArgs, file: &ConfigFile) -> CliResult<()> {
    let mut r = Resolver::new(file);
    let mus = r.list("mu_list", a.mu_list.clone())?;
    let mut sim = resolve_sim(
        &mut r,
        &a.sim,
        SimDefaults {
            mu: 150.0,
            reps: 200,
            gvst: 5000,
        },
    )?;
    let mus = match mus {
        Some(m) if m.is_empty() => return Err(CliError::usage("mu_list is empty")),
        Some(m) => m,
        None if a.sim.mu.is_some() || file.get("mu").is_some() => vec![sim.true_mu],
        None => DEFAULT_BENCHMARK_MUS.to_vec(),
    };
    let solver = resolve_solver(&mut r, &a.solver)?;
    require_reps(&sim)?;
    let mut rows = Vec::with_capacity(mus.len());
    for &mu in &mus {
        sim.true_mu = mu;
        let row = evaluate_setting(&sim, &solver)?;
        log::info!("mu={mu}: two-sided mean {:.3}", row.two_sided.mean_mu_hat);
        rows.push(row);
    }
    let mut run = Run::new(
        Command::Benchmark,
        r.into_resolved(),
        Some(sim.seed),
        vec![],
        sidecar_path(&a.out),
    );
    let mut buf = Vec::new();
    write_benchmark_csv(&rows, &mut buf)?;
    run.write(&a.out, &buf)?;
    run.finish()?;
    for row in &rows {
        println!(
            "mu={:>6}  two-sided {:.2} ({:.2}%)  closed-form {:.2} ({:.2}%)  newton {:.2} ({:.2}%)",
            row.mu,
            row.two_sided.mean_mu_hat,
            100.0 * row.two_sided.metrics.mape,
            row.one_sided_closed_form.mean_mu_hat,
            100.0 * row.one_sided_closed_form.metrics.mape,
            row.one_sided_newton.mean_mu_hat,
            100.0 * row.one_sided_newton.metrics.mape,
        );
    }
    Ok(())
}

// ---------------------------------------------------------------------- ks

#[derive(Serialize)]
struct KsOutput {
    run: RunRef,
    unit_id: String,
    lambda: f64,
    mu: f64,
    capacity_k: usize,
    n_g: usize,
    report: KsReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    fit: Option<EstimationResult>,
}

pub fn ks(a: &KsArgs, file: &ConfigFile) -> CliResult<()> {
    let mut r = Resolver::new(file);
    let k = r.value("k", a.k, SimulationConfig::default().capacity_k)?;
    let fit_mode = r.value("fit", Some(a.fit).filter(|&f| f), false)?;
    let (id, input, gvst, n_d, n_p) = if let Some(path) = &a.events {
        let utc = r.value("utc_offset", a.window.utc_offset, 0)?;
        let (events, report) = read_events_path(path, utc)?;
        log_report(path, &report);
        let w = resolve_window(&mut r, &a.window, utc, &events)?;
        let obs = UnitObservation::from_stream(&split_events(&unit_id_of(path), &events, w));
        (
            unit_id_of(path),
            path,
            obs.gvst.clone(),
            Some(obs.dropoff_rate()),
            Some(obs.pickup_rate()),
        )
    } else if let Some(path) = &a.samples {
        let ys = read_samples(path)?;
        let gvst = GvstCollection::from_samples(ys).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
        (
            unit_id_of(path),
            path,
            gvst,
            r.optional("n_d", a.n_d)?,
            r.optional("n_p", a.n_p)?,
        )
    } else {
        return Err(CliError::usage("give --events or --samples"));
    };

    let seed;
    let (lambda, mu, report, fit) = if fit_mode {
        let bootstrap = r.value("bootstrap", a.bootstrap, 0usize)?;
        seed = Some(r.seed(a.seed)?);
        let solver = resolve_solver(&mut r, &a.solver)?;
        let (n_d, n_p) = match (n_d, n_p) {
            (Some(d), Some(p)) => (d, p),
            _ => return Err(CliError::usage("--fit needs drop-off and pick-up rates (--n-d, --n-p)")),
        };
        let (fit, report) = ks_test_fitted(&gvst, n_d, n_p, k, &solver, bootstrap, seed.unwrap_or_default())?;
        (fit.lambda_hat.unwrap_or(n_d), fit.mu_hat, report, Some(fit))
    } else {
        seed = None;
        let lambda = r
            .optional("lambda", a.lambda)?
            .ok_or_else(|| CliError::usage("give --lambda and --mu, or --fit"))?;
        let mu = r
            .optional("mu", a.mu)?
            .ok_or_else(|| CliError::usage("give --lambda and --mu, or --fit"))?;
        let params = FqmParams::new(lambda, mu, k)?;
        (lambda, mu, ks_test(&gvst, &params)?, None)
    };

    let mut run = Run::new(
        Command::Ks,
        r.into_resolved(),
        seed,
        vec![input.display().to_string()],
        sidecar_path(&a.out),
    );
    let doc = KsOutput {
        run: run.reference(),
        unit_id: id,
        lambda,
        mu,
        capacity_k: k,
        n_g: gvst.len(),
        report,
        fit,
    };
    run.write_json(&a.out, &doc)?;
    run.finish()?;
    println!(
        "{}: D={:.5} p={:.4}{} n={} at lambda={:.4} mu={:.4}",
        doc.unit_id,
        report.statistic,
        report.p_value,
        report
            .bootstrap_p_value
            .map(|p| format!(" bootstrap p={p:.4}"))
            .unwrap_or_default(),
        report.n,
        lambda,
        mu
    );
    Ok(())
}

// ------------------------------------------------------------------- sweep

#[derive(Serialize)]
struct SweepOutput {
    run: RunRef,
    #[serde(flatten)]
    result: SweepResult,
}

pub fn sweep_cmd(a: &SweepArgs, file: &ConfigFile) -> CliResult<()> {
    let mut r = Resolver::new(file);
    let axis: SweepAxis = r
        .optional("axis", a.axis.clone())?
        .ok_or_else(|| CliError::usage("--axis is required"))?
        .parse()?;
    let values = r
        .list("values", a.values.clone())?
        .ok_or_else(|| CliError::usage("--values is required"))?;
    let sim = resolve_sim(
        &mut r,
        &a.sim,
        SimDefaults {
            mu: 150.0,
            reps: 100,
            gvst: 5000,
        },
    )?;
    let solver = resolve_solver(&mut r, &a.solver)?;
    require_reps(&sim)?;
    let result = sweep(&sim, axis, &values, &solver)?;
    let mut run = Run::new(
        Command::Sweep,
        r.into_resolved(),
        Some(sim.seed),
        vec![],
        sidecar_path(&a.out),
    );
    let doc = SweepOutput {
        run: run.reference(),
        result,
    };
    run.write_json(&a.out, &doc)?;
    run.finish()?;
    for p in &doc.result.points {
        println!(
            "{}={:<8} two-sided mean {:.2}  MAPE {:.2}%  MAE {:.2}",
            axis.as_str(),
            p.value,
            p.row.two_sided.mean_mu_hat,
            100.0 * p.row.two_sided.metrics.mape,
            p.row.two_sided.metrics.mae
        );
    }
    Ok(())
}
