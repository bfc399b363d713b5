//! Command-line pipeline: dataset generation, prior training, one-shot
//! reconstruction, active measurement runs, and cross-run reports.

mod commands;
mod raster;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use radiomap::Error;

/// Default data root: `$RADIOMAP_DATA_ROOT` or `./data`.
fn data_root() -> PathBuf {
    std::env::var_os("RADIOMAP_DATA_ROOT")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("data"))
}

#[derive(Parser)]
#[command(
    name = "radiomap",
    about = "Radio map reconstruction with a flow-matching prior and uncertainty-guided UAV sampling",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic train/test dataset of ground-truth radio maps.
    Gen(GenArgs),
    /// Train the flow-matching velocity field on a dataset.
    Train(TrainArgs),
    /// Reconstruct one held-out map from a random fraction of observations.
    Reconstruct(ReconstructArgs),
    /// Run an active measurement mission (or a baseline) on a fresh scenario.
    Active(ActiveArgs),
    /// Align NMSE curves of finished runs and summarize relative reductions.
    Report(ReportArgs),
}

#[derive(Args)]
struct GenArgs {
    /// Output directory; train/ and test/ subdirectories are created inside.
    #[arg(long, default_value_os_t = data_root().join("dataset"))]
    out: PathBuf,
    /// Number of training maps.
    #[arg(long, default_value_t = 800)]
    count: usize,
    /// Number of test maps (0 skips the test split).
    #[arg(long, default_value_t = 30)]
    test_count: usize,
    /// Grid side length (maps are square).
    #[arg(long, default_value_t = 32)]
    size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Transmitters per scenario.
    #[arg(long, default_value_t = 7)]
    tx_count: usize,
    /// Shadowing standard deviation in dB.
    #[arg(long, default_value_t = 6.0)]
    shadowing_sigma: f64,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset directory (a split directory containing manifest.json).
    #[arg(long, default_value_os_t = data_root().join("dataset/train"))]
    data: PathBuf,
    /// Output model file.
    #[arg(long, default_value_os_t = data_root().join("model.rfm"))]
    out: PathBuf,
    #[arg(long, default_value_t = 2000)]
    steps: usize,
    #[arg(long, default_value_t = 16)]
    batch: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    /// Hidden channels of the velocity network.
    #[arg(long, default_value_t = 32)]
    channels: usize,
    /// Hidden convolution layers.
    #[arg(long, default_value_t = 4)]
    layers: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ReconstructArgs {
    #[arg(long, default_value_os_t = data_root().join("model.rfm"))]
    model: PathBuf,
    /// Dataset directory to pull the ground-truth map from.
    #[arg(long, default_value_os_t = data_root().join("dataset/test"))]
    data: PathBuf,
    /// Map index within the dataset.
    #[arg(long, default_value_t = 0)]
    index: usize,
    /// Fraction of cells observed.
    #[arg(long, default_value_t = 0.02)]
    fraction: f64,
    #[arg(long, default_value_os_t = data_root().join("reconstruction"))]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Data-consistency step size.
    #[arg(long, default_value_t = 2.0)]
    gamma: f64,
    /// Outer PnP steps.
    #[arg(long, default_value_t = 50)]
    outer_steps: usize,
}

#[derive(Args)]
struct ActiveArgs {
    #[arg(long, default_value_os_t = data_root().join("model.rfm"))]
    model: PathBuf,
    /// Seed of the fresh evaluation scenario.
    #[arg(long, default_value_t = 0)]
    scenario_seed: u64,
    /// Additional samples the mission may collect.
    #[arg(long, default_value_t = 400)]
    budget: usize,
    #[arg(long, value_enum, default_value_t = commands::StrategyArg::Proposed)]
    strategy: commands::StrategyArg,
    #[arg(long, default_value_os_t = data_root().join("runs/run"))]
    out: PathBuf,
    /// Mission seed (initial observations, ensembles, planning).
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Expected grid side; rejected if it disagrees with the model.
    #[arg(long)]
    size: Option<usize>,
    /// Initially observed fraction of cells.
    #[arg(long, default_value_t = 0.02)]
    fraction: f64,
    /// Ensemble size for uncertainty estimation.
    #[arg(long, default_value_t = 5)]
    ensemble: usize,
    /// Candidate locations per slot.
    #[arg(long, default_value_t = 10)]
    candidates: usize,
    /// Distance trade-off in candidate weighting.
    #[arg(long, default_value_t = 0.001)]
    kappa: f64,
    /// Exploration incentive of the step cost.
    #[arg(long, default_value_t = 0.9)]
    beta: f64,
    /// Data-consistency step size.
    #[arg(long, default_value_t = 2.0)]
    gamma: f64,
    /// Outer PnP steps.
    #[arg(long, default_value_t = 50)]
    outer_steps: usize,
    /// Samples between evaluations of the random baseline.
    #[arg(long, default_value_t = 100)]
    eval_cadence: usize,
    /// Per-slot flight step cap (default: four grid sides).
    #[arg(long)]
    slot_cap: Option<usize>,
}

#[derive(Args)]
struct ReportArgs {
    /// Run directories (each containing runlog.jsonl) or runlog files.
    #[arg(long, required = true, num_args = 1..)]
    runs: Vec<PathBuf>,
    /// Comparison table destination.
    #[arg(long, default_value = "report.csv")]
    out: PathBuf,
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Io { .. } | Error::Json { .. } => 2,
        Error::InvalidConfig(_) | Error::InvalidInput(_) | Error::GridExhausted => 3,
        Error::Divergence { .. } | Error::NonFinite { .. } => 4,
        Error::ShapeMismatch { .. } => 5,
        Error::MalformedLog { .. } => 6,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen(args) => commands::gen(args),
        Command::Train(args) => commands::train(args),
        Command::Reconstruct(args) => commands::reconstruct(args),
        Command::Active(args) => commands::active(args),
        Command::Report(args) => commands::report(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
