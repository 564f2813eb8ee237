//! Experiment CLI: generate traces, run the constrained bandit algorithms
//! over seeds, and emit metrics plus plot-ready data.
//!
//! Exit codes: 0 success, 2 configuration/input errors, 3 trace
//! infeasibility, 4 numerical failure.

mod config;
mod plot;
mod runner;

use std::path::PathBuf;
use std::process::ExitCode;

use beambandit::env::{BeamCodebook, EnvError};
use beambandit::oracle::OracleError;
use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use config::{ExperimentConfig, Scenario};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Io(_) => 2,
            CliError::Infeasible(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }
}

impl From<EnvError> for CliError {
    fn from(e: EnvError) -> Self {
        match e {
            EnvError::SlaterInfeasible { .. } => CliError::Infeasible(e.to_string()),
            EnvError::Io(io) => CliError::Io(io),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<OracleError> for CliError {
    fn from(e: OracleError) -> Self {
        match e {
            OracleError::Infeasible { .. } => CliError::Infeasible(e.to_string()),
            other => CliError::Numerical(other.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(
    name = "beambandit",
    version,
    about = "Constrained non-stationary kernelized bandit experiments",
    after_help = "Environment: BEAMBANDIT_WORKERS caps the worker pool size."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment: traces, algorithms over seeds, CSVs, manifest.
    Run(RunArgs),
    /// Convert aggregated metrics into per-panel plot files.
    PlotData(PlotArgs),
    /// Standalone trace handling.
    #[command(subcommand)]
    Trace(TraceCommand),
}

#[derive(Args)]
struct RunArgs {
    /// Experiment TOML; every field has a default.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Scenario override: abrupt, slow, or synthetic.
    #[arg(long)]
    scenario: Option<String>,

    /// Seed list override, comma separated.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,

    /// Output directory override.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PlotArgs {
    /// Experiment output directory (reads its aggregate/ subdirectory).
    #[arg(long = "in")]
    input: PathBuf,

    /// Directory for the panel files.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum TraceCommand {
    /// Generate a trace file for one seed.
    Gen(TraceGenArgs),
    /// Print a trace file's header and validity checks.
    Inspect(TraceInspectArgs),
}

#[derive(Args)]
struct TraceGenArgs {
    #[arg(long)]
    config: Option<PathBuf>,

    #[arg(long)]
    scenario: Option<String>,

    #[arg(long, default_value_t = 1)]
    seed: u64,

    #[arg(long)]
    horizon: Option<usize>,

    /// Trace file to write.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TraceInspectArgs {
    /// Trace file to read.
    #[arg(long)]
    input: PathBuf,
}

fn load_config(
    path: &Option<PathBuf>,
    scenario: &Option<String>,
    seeds: &Option<Vec<u64>>,
    out: &Option<PathBuf>,
) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match path {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(name) = scenario {
        cfg.scenario = name.parse::<Scenario>().map_err(CliError::Config)?;
    }
    if let Some(seeds) = seeds {
        cfg.seeds = seeds.clone();
    }
    if let Some(out) = out {
        cfg.output = out.clone();
    }
    Ok(cfg)
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run(args) => {
            let cfg = load_config(&args.config, &args.scenario, &args.seeds, &args.out)?;
            runner::run_experiment(&cfg)
        }
        Command::PlotData(args) => plot::emit_plot_data(&args.input, &args.out),
        Command::Trace(TraceCommand::Gen(args)) => {
            let mut cfg = load_config(&args.config, &args.scenario, &None, &None)?;
            if let Some(h) = args.horizon {
                cfg.horizon = h;
            }
            cfg.validate()?;
            let codebook = BeamCodebook::uniform(cfg.env.antennas, cfg.env.beams)?;
            let trace = runner::build_trace(&cfg, &codebook, args.seed)?;
            trace.export_to_path(&args.out)?;
            println!("wrote {}", args.out.display());
            Ok(())
        }
        Command::Trace(TraceCommand::Inspect(args)) => {
            print!("{}", runner::inspect_trace(&args.input)?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
