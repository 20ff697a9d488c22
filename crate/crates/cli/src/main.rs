//! `apc`: dataset generation, pose estimation, the oracle ICP baseline,
//! evaluation and the property suite.

mod commands;
mod error;
mod formats;

use std::path::PathBuf;
use std::process::ExitCode;

use apc_core::checks::Precision;
use apc_core::cloud::ChamferMode;
use apc_core::rotgroup::GroupKind;
use apc_core::synthdata::ShapeKind;
use clap::{Args, Parser, Subcommand};

use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "apc", version, about = "Articulated point-cloud pose estimation")]
pub struct Cli {
    /// Worker threads (defaults to every core). Outputs do not depend on it.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Random seed. The APC_SEED environment variable takes precedence.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Floating-point type of the convolution checks.
    #[arg(long, global = true, default_value = "float64")]
    pub precision: Precision,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset directory.
    Gen(GenArgs),
    /// Estimate the pose of every sample of a dataset.
    Estimate(EstimateArgs),
    /// Run the per-part oracle ICP baseline on a dataset.
    BaselineIcp(IcpArgs),
    /// Score predictions against ground truth.
    Eval(EvalArgs),
    /// Run the property suite; exits with 4 on any violation.
    Verify(VerifyArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub kind: ShapeKind,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub states: usize,
    #[arg(long, default_value_t = 3)]
    pub rots: usize,
    /// Render one partial view per sample.
    #[arg(long)]
    pub partial: bool,
    #[arg(long, default_value_t = 32)]
    pub resolution: usize,
    /// Half-angle (degrees) of the viewing cone around the front direction.
    #[arg(long, default_value_t = 40.0)]
    pub cone: f64,
    /// Gaussian noise per coordinate.
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    /// Plain boxes without the asymmetry bumps, sampled on an exact lattice.
    #[arg(long)]
    pub symmetric: bool,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    /// Dataset directory written by `gen`.
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory for predictions.json, metrics.json and metrics.csv.
    #[arg(long)]
    pub out: PathBuf,
    /// Estimator configuration (JSON); flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Defaults to octahedral, or icosahedral for partial datasets.
    #[arg(long)]
    pub group: Option<GroupKind>,
    /// Defaults to bi, or uni for partial datasets.
    #[arg(long)]
    pub mode: Option<ChamferMode>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub hypothesis_iterations: Option<usize>,
    #[arg(long)]
    pub screen_iterations: Option<usize>,
    #[arg(long)]
    pub refine_top: Option<usize>,
    #[arg(long)]
    pub finalists: Option<usize>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub joint_samples: Option<usize>,
    #[arg(long)]
    pub grid_size: Option<usize>,
    #[arg(long)]
    pub refine_assembly: bool,
    #[arg(long)]
    pub prealign: bool,
}

#[derive(Debug, Args)]
pub struct IcpArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "icosahedral")]
    pub group: GroupKind,
    #[arg(long, default_value_t = 50)]
    pub max_iter: usize,
    /// Inlier radius relative to the part diameter.
    #[arg(long, default_value_t = 0.1)]
    pub inlier_ratio: f64,
    /// Template model directory; repeat to register several templates and
    /// keep the one with the lowest mean inlier RMSE. Defaults to the
    /// dataset's own model.
    #[arg(long = "template")]
    pub templates: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Predictions written by `estimate` or `baseline-icp`.
    #[arg(long)]
    pub pred: PathBuf,
    /// A dataset directory, or another predictions file used as ground truth.
    #[arg(long)]
    pub gt: PathBuf,
    /// Dataset holding the model; defaults to the one named in `--pred`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Predictions on canonical inputs; their residual pose is removed from
    /// `--pred` before scoring.
    #[arg(long)]
    pub calibrate: Option<PathBuf>,
    /// CSV output (stdout when absent).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long, default_value = "octahedral")]
    pub group: GroupKind,
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
}

fn seed(flag: u64) -> Result<u64, CliError> {
    match std::env::var("APC_SEED") {
        Ok(v) => v.trim().parse().map_err(|_| CliError::BadArgs(format!("APC_SEED={v:?} is not an unsigned integer"))),
        Err(_) => Ok(flag),
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(CliError::BadArgs("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| CliError::Other(e.to_string()))?;
    }
    let seed = seed(cli.seed)?;
    match &cli.command {
        Command::Gen(a) => commands::gen(a, seed),
        Command::Estimate(a) => commands::estimate(a),
        Command::BaselineIcp(a) => commands::baseline_icp(a, seed),
        Command::Eval(a) => commands::eval(a, seed),
        Command::Verify(a) => commands::verify(a, cli.precision, seed),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("apc: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
