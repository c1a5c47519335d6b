//! `lka` command line: geometry audits, telemetry analysis, deviation fits,
//! simulation sweeps and readiness classification, each writing its results
//! into an output directory.

pub mod commands;
pub mod config;
pub mod markdown;
pub mod output;
pub mod svg;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

/// Seed used when neither the flag nor the config file gives one.
pub const DEFAULT_SEED: u64 = 42;

pub const EXIT_OK: u8 = 0;
pub const EXIT_INPUT: u8 = 1;
pub const EXIT_VIOLATIONS: u8 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
    Svg,
    #[value(alias = "markdown")]
    #[serde(alias = "markdown")]
    Md,
}

#[derive(Debug, Parser)]
#[command(name = "lka", version, about = "Lane keeping assist analysis toolkit")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true, env = "LKA_AUDIT_CONFIG")]
    pub config: Option<PathBuf>,
    /// Output directory (default: current directory).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output formats to write (default: all).
    #[arg(long, global = true, value_enum, value_delimiter = ',', num_args = 1..)]
    pub format: Vec<Format>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a road geometry against a vehicle capability (R1..R4).
    Audit(AuditArgs),
    /// Segment telemetry logs, diagnose failures and tally contributing factors.
    Analyze(AnalyzeArgs),
    /// Collect failure episodes plus a seeded sample of normal ones.
    Curate(CurateArgs),
    /// Fit lateral deviation against curvature from telemetry apex windows.
    Fit(LogArgs),
    /// Run the closed-loop curvature sweep and refit deviation against curvature.
    Simulate(SimulateArgs),
    /// Train the readiness classifier on a labelled CSV or synthetic data.
    Train(TrainArgs),
    /// Classify road segments with a trained model.
    Predict(PredictArgs),
    /// Render a markdown report from JSON outputs of the other subcommands.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Args)]
pub struct AuditArgs {
    /// Geometry CSV (x_m, kappa_inv_m, roll_rad, posted_speed_mps).
    #[arg(long)]
    pub geometry: Option<PathBuf>,
    /// Vehicle capability JSON.
    #[arg(long)]
    pub capability: Option<PathBuf>,
    /// Audit every station at this speed [m/s] instead of the posted speed.
    #[arg(long)]
    pub speed: Option<f64>,
    /// Share of the torque-rate limit available to superelevation change.
    #[arg(long)]
    pub budget: Option<f64>,
    /// Findings closer than this many metres are merged.
    #[arg(long)]
    pub merge_gap: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct LogArgs {
    /// Telemetry CSV logs.
    #[arg(long = "log", num_args = 1..)]
    pub logs: Vec<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub logs: LogArgs,
    /// Vehicle capability JSON (default: generic passenger car).
    #[arg(long)]
    pub capability: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct CurateArgs {
    #[command(flatten)]
    pub logs: LogArgs,
    /// Normal episodes sampled per failure episode.
    #[arg(long)]
    pub ratio: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub capability: Option<PathBuf>,
    /// Curvatures to sweep [1/m].
    #[arg(long, value_delimiter = ',', num_args = 1.., allow_negative_numbers = true)]
    pub kappas: Vec<f64>,
    /// Sweep speed [m/s].
    #[arg(long)]
    pub speed: Option<f64>,
    /// Also write the time trace of every run.
    #[arg(long)]
    pub trace: bool,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    /// Labelled feature CSV; synthetic data is generated when absent.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Synthetic training rows.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub trees: Option<usize>,
    /// Held-out share of the data.
    #[arg(long)]
    pub test_fraction: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Feature CSV without an outcome column.
    #[arg(long)]
    pub features: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ReportArgs {
    /// JSON files written by audit, fit, simulate or train.
    #[arg(long = "input", num_args = 1..)]
    pub inputs: Vec<PathBuf>,
}

/// Runs one parsed command line and returns the process exit code.
pub fn run(cli: &Cli) -> anyhow::Result<u8> {
    let cfg = config::load(cli.common.config.as_deref())?;
    let ctx = commands::Context::new(&cli.common, &cfg)?;
    match &cli.command {
        Command::Audit(a) => commands::cmd_audit(&ctx, &cfg, a),
        Command::Analyze(a) => commands::cmd_analyze(&ctx, &cfg, a),
        Command::Curate(a) => commands::cmd_curate(&ctx, &cfg, a),
        Command::Fit(a) => commands::cmd_fit(&ctx, &cfg, a),
        Command::Simulate(a) => commands::cmd_simulate(&ctx, &cfg, a),
        Command::Train(a) => commands::cmd_train(&ctx, &cfg, a),
        Command::Predict(a) => commands::cmd_predict(&ctx, &cfg, a),
        Command::Report(a) => commands::cmd_report(&ctx, &cfg, a),
    }
}
