//! `rfmc`: seeded Monte Carlo slope-reliability pipeline with surrogate
//! classifiers. Subcommands: generate, train-eval, report, timing.

mod commands;
mod config;
mod svg;

use clap::{Parser, Subcommand};
use config::ExperimentConfig;
use rfmc::{Error, Result};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "rfmc",
    version,
    about = "Random-field Monte Carlo slope reliability pipeline"
)]
struct Cli {
    /// Experiment configuration (JSON, validated against the shipped schema)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; dataset files are also read from here
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker thread count (default: all cores). Results do not depend on it
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Master seed override
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Multiplies n_per_mu for desk-scale runs
    #[arg(long, global = true)]
    scale: Option<f64>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate one labeled RFMC dataset per (COV, anisotropy ratio) pair
    Generate,
    /// Split, train and evaluate the configured models on generated datasets
    TrainEval,
    /// Draw SVG figures from the CSV tables of a train-eval run
    Report,
    /// Measure per-stage wall times and extrapolate to full scale
    Timing,
    /// Print the JSON schema that configuration files validate against
    Schema,
}

fn run(cli: &Cli) -> Result<()> {
    if let Some(w) = cli.workers {
        if w == 0 {
            return Err(Error::config("workers must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build_global()
            .map_err(|e| Error::config(format!("thread pool: {e}")))?;
    }
    if let Cmd::Schema = cli.cmd {
        print!("{}", config::CONFIG_SCHEMA);
        return Ok(());
    }
    let config_path = cli
        .config
        .as_ref()
        .ok_or_else(|| Error::config("--config is required"))?;
    let out = cli
        .out
        .as_ref()
        .ok_or_else(|| Error::config("--out is required"))?;
    let cfg = ExperimentConfig::load(config_path)?.resolve(cli.seed, cli.scale)?;
    match cli.cmd {
        Cmd::Generate => commands::run_generate(&cfg, out),
        Cmd::TrainEval => commands::run_train_eval(&cfg, out),
        Cmd::Report => commands::run_report(&cfg, out),
        Cmd::Timing => commands::run_timing(&cfg, out),
        Cmd::Schema => unreachable!("handled above"),
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Domain(_) => 2,
        Error::Data(_) | Error::Io(_) | Error::Serde(_) => 3,
        Error::Numeric(_) | Error::Factorization { .. } => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
