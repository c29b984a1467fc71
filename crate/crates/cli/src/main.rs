mod args;
mod commands;
mod error;
mod manifest;
mod settings;

use args::{Cli, Command};
use clap::Parser;
use error::{CliError, CliResult};
use settings::ConfigFile;

fn run(cli: Cli) -> CliResult<()> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(CliError::usage("--jobs must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| CliError::usage(e.to_string()))?;
    }
    let file = match &cli.config {
        Some(path) => ConfigFile::load(path)?,
        None => ConfigFile::default(),
    };
    match &cli.command {
        Command::Simulate(a) => commands::simulate(a, &file),
        Command::ExtractGvst(a) => commands::extract(a, &file),
        Command::Estimate(a) => commands::estimate(a, &file),
        Command::Benchmark(a) => commands::benchmark(a, &file),
        Command::Ks(a) => commands::ks(a, &file),
        Command::Sweep(a) => commands::sweep_cmd(a, &file),
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
