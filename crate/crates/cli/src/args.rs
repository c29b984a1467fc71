use clap::{Args, Parser, Subcommand, ValueEnum};
use std::path::PathBuf;

#[derive(Debug, Parser)]
#[command(
    name = "fqm",
    version,
    about = "Estimate real pick-up demand at micro-mobility units from trip records"
)]
pub struct Cli {
    /// Flat `key = value` config file (or a run manifest). Flags override it.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Worker threads. Defaults to the number of available processors.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,

    /// Log more (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate one unit and write per-replication event files plus ground truth.
    Simulate(SimulateArgs),
    /// Extract survival samples from one event file.
    ExtractGvst(ExtractArgs),
    /// Estimate real demand for one or more units.
    Estimate(EstimateArgs),
    /// Score all estimators on simulated data over a grid of user rates.
    Benchmark(BenchmarkArgs),
    /// Goodness-of-fit test of survival samples against the fitted law.
    Ks(KsArgs),
    /// Benchmark one setting while varying a single parameter.
    Sweep(SweepArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Extraction {
    Continuous,
    PerWindow,
}

impl std::fmt::Display for Extraction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Extraction::Continuous => "continuous",
            Extraction::PerWindow => "per-window",
        })
    }
}

impl std::str::FromStr for Extraction {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        <Extraction as ValueEnum>::from_str(s, true)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    TwoSided,
    OneSided,
    Newton,
    All,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::TwoSided => "two-sided",
            Method::OneSided => "one-sided",
            Method::Newton => "newton",
            Method::All => "all",
        })
    }
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        <Method as ValueEnum>::from_str(s, true)
    }
}

/// Simulation settings shared by `simulate`, `benchmark` and `sweep`.
#[derive(Debug, Clone, Args)]
pub struct SimArgs {
    /// Vehicle arrival rate per hour.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// User arrival rate per hour.
    #[arg(long, allow_hyphen_values = true)]
    pub mu: Option<f64>,
    /// Unit capacity.
    #[arg(long)]
    pub k: Option<usize>,
    /// Survival samples collected per replication.
    #[arg(long)]
    pub gvst: Option<usize>,
    #[arg(long)]
    pub reps: Option<usize>,
    /// Base seed; falls back to FQM_SEED.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Recording window length, hours.
    #[arg(long)]
    pub horizon: Option<f64>,
    /// Simulated hours discarded before recording.
    #[arg(long)]
    pub warmup: Option<f64>,
    #[arg(long)]
    pub initial_inventory: Option<usize>,
    #[arg(long, value_enum)]
    pub extraction: Option<Extraction>,
}

/// Search box and stopping rules.
#[derive(Debug, Clone, Args)]
pub struct SolverArgs {
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub lambda_lower: Option<f64>,
    #[arg(long)]
    pub lambda_upper: Option<f64>,
    #[arg(long)]
    pub mu_lower: Option<f64>,
    #[arg(long)]
    pub mu_upper: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub sim: SimArgs,
    /// Output directory; created if missing.
    #[arg(long)]
    pub out: PathBuf,
}

/// Explicit observation window. Without it the window is the span of the
/// events widened to whole hours.
#[derive(Debug, Clone, Args)]
pub struct WindowArgs {
    #[arg(long)]
    pub window_start: Option<String>,
    #[arg(long)]
    pub window_end: Option<String>,
    /// Offset of naive timestamps from UTC, seconds.
    #[arg(long, allow_hyphen_values = true)]
    pub utc_offset: Option<i32>,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    #[arg(long)]
    pub events: PathBuf,
    #[command(flatten)]
    pub window: WindowArgs,
    /// CSV of matched pairs and survival times in hours.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    /// Event CSV files, one unit each.
    #[arg(long, num_args = 1.., conflicts_with_all = ["trips", "samples"])]
    pub events: Vec<PathBuf>,
    /// Trip CSV; units come from stations or grid cells.
    #[arg(long, conflicts_with = "samples")]
    pub trips: Option<PathBuf>,
    /// Survival times in hours, one per line or in the last CSV column.
    #[arg(long)]
    pub samples: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub method: Option<Method>,
    /// Capacity. Trip input infers it per unit when absent.
    #[arg(long)]
    pub k: Option<usize>,
    /// Drop-off rate per hour, for `--samples`.
    #[arg(long)]
    pub n_d: Option<f64>,
    /// Pick-up rate per hour, for `--samples`.
    #[arg(long)]
    pub n_p: Option<f64>,
    /// Minimum pick-up/drop-off ratio for a unit to be estimated.
    #[arg(long)]
    pub min_ratio: Option<f64>,
    /// Parametric-bootstrap resamples for the KS p-value; 0 disables.
    #[arg(long)]
    pub bootstrap: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub trip: TripArgs,
    #[command(flatten)]
    pub window: WindowArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Per-unit results, JSON.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct TripArgs {
    /// `station` or `dockless`.
    #[arg(long)]
    pub schema: Option<String>,
    /// Start of the first daily window.
    #[arg(long)]
    pub start: Option<String>,
    #[arg(long)]
    pub window_hours: Option<f64>,
    #[arg(long)]
    pub days: Option<usize>,
    /// Grid cell size in metres, dockless only.
    #[arg(long)]
    pub grid_size: Option<f64>,
    /// `min_lat,min_lon,max_lat,max_lon`; defaults to the data extent.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub bbox: Option<Vec<f64>>,
    /// Restrict to these unit ids.
    #[arg(long, value_delimiter = ',')]
    pub units: Option<Vec<String>>,
}

#[derive(Debug, Args)]
pub struct BenchmarkArgs {
    #[command(flatten)]
    pub sim: SimArgs,
    /// User rates to evaluate, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub mu_list: Option<Vec<f64>>,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Benchmark table, CSV.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct KsArgs {
    #[arg(long, conflicts_with = "samples")]
    pub events: Option<PathBuf>,
    #[arg(long)]
    pub samples: Option<PathBuf>,
    /// Test against the two-sided fit instead of given rates.
    #[arg(long)]
    pub fit: bool,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub mu: Option<f64>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub n_d: Option<f64>,
    #[arg(long)]
    pub n_p: Option<f64>,
    #[arg(long)]
    pub bootstrap: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub window: WindowArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// KS report, JSON.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// `capacity`, `gvst-count`, `mu` or `grid-size`.
    #[arg(long)]
    pub axis: Option<String>,
    /// Axis values, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub values: Option<Vec<f64>>,
    #[command(flatten)]
    pub sim: SimArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Sweep result, JSON.
    #[arg(long)]
    pub out: PathBuf,
}
