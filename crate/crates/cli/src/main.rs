mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::ExperimentConfig;

const EXIT_USAGE: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_NUMERIC: u8 = 4;

#[derive(Parser, Debug)]
#[command(name = "mlrecon", version, about = "Markerless freehand 3D ultrasound reconstruction pipeline")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Experiment config (JSON); flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides `output_dir`).
    #[arg(long, short, global = true)]
    out: Option<PathBuf>,
    /// Global seed (overrides `seed`).
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate a scan bundle: ground truth, raw tracker stream and frames.
    Simulate(SimulateArgs),
    /// Run the tracking loop with divergence detection over a bundle.
    Track(TrackArgs),
    /// Train a pose refiner from scratch on simulated pairs.
    RefineTrain(TrainArgs),
    /// Refine a pose sequence with a trained model or a baseline filter.
    RefineApply(ApplyArgs),
    /// Estimate the latency between two `t,value` signals.
    CalibrateTemporal(TemporalArgs),
    /// Solve the image-to-probe transform from N-wire observations.
    CalibrateSpatial(SpatialArgs),
    /// Compound bundle frames into a voxel volume.
    Compound(CompoundArgs),
    /// Trajectory and volume metrics against ground truth.
    Evaluate(EvaluateArgs),
    /// Aggregate metrics CSVs into mean(std) tables.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[arg(long)]
    pub mode: Option<String>,
    /// Path length, mm.
    #[arg(long)]
    pub distance: Option<f64>,
    /// Duration, s.
    #[arg(long)]
    pub duration: Option<f64>,
    /// `a`, `b`, `c` or `sphere`.
    #[arg(long)]
    pub phantom: Option<String>,
    /// Skip frame rendering.
    #[arg(long)]
    pub no_frames: bool,
    /// Use noise-free raw poses.
    #[arg(long)]
    pub zero_noise: bool,
}

#[derive(Args, Debug)]
pub struct TrackArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    /// JSON failure script.
    #[arg(long)]
    pub failures: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Continue from an existing model.
    #[arg(long)]
    pub init: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ApplyMethod {
    Refiner,
    Baseline,
}

#[derive(Args, Debug)]
pub struct ApplyArgs {
    /// Input pose CSV.
    #[arg(long)]
    pub poses: PathBuf,
    /// Model file (required for `--method refiner`).
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "refiner")]
    pub method: ApplyMethod,
    /// Refine the whole sequence in one pass instead of windows.
    #[arg(long)]
    pub whole: bool,
}

#[derive(Args, Debug)]
pub struct TemporalArgs {
    /// Reference signal CSV (`t,value`).
    #[arg(long)]
    pub a: PathBuf,
    /// Delayed signal CSV (`t,value`).
    #[arg(long)]
    pub b: PathBuf,
    #[arg(long)]
    pub max_lag: Option<f64>,
    /// Resampling rate, Hz; defaults to the median rate of `a`.
    #[arg(long)]
    pub rate: Option<f64>,
}

#[derive(Args, Debug)]
pub struct SpatialArgs {
    /// N-wire dataset JSON; simulated from the config when absent.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub observations: Option<usize>,
    /// Gaussian pixel noise sigma for simulation.
    #[arg(long)]
    pub noise_px: Option<f64>,
}

#[derive(Args, Debug)]
pub struct CompoundArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    /// Pose CSV; the bundle's ground truth when absent.
    #[arg(long)]
    pub poses: Option<PathBuf>,
    /// Spatial calibration JSON; the bundle's image-to-probe transform when absent.
    #[arg(long)]
    pub calibration: Option<PathBuf>,
    /// Temporal calibration JSON; the bundle's latency when absent.
    #[arg(long)]
    pub temporal: Option<PathBuf>,
    #[arg(long)]
    pub spacing: Option<f64>,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// Ground-truth pose CSV.
    #[arg(long)]
    pub gt: Option<PathBuf>,
    /// `method=path` pose CSVs to score; repeatable.
    #[arg(long = "est", value_name = "METHOD=PATH")]
    pub estimates: Vec<String>,
    /// `method=dir` volumes to score against the bundle phantom; repeatable.
    #[arg(long = "volume", value_name = "METHOD=DIR")]
    pub volumes: Vec<String>,
    /// Bundle whose phantom is the volume reference.
    #[arg(long)]
    pub bundle: Option<PathBuf>,
    #[arg(long, default_value = "0")]
    pub trial: String,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// Metrics CSVs with identical columns.
    #[arg(required = true)]
    pub metrics: Vec<PathBuf>,
}

pub fn load_config(common: &Common) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.output_dir = Some(out.clone());
    }
    Ok(cfg)
}

/// Marks a failure as a usage error (exit code 2).
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

/// Marks a failure as numeric (exit code 4).
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct NumericError(pub String);

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return EXIT_USAGE;
        }
        if cause.is::<NumericError>() {
            return EXIT_NUMERIC;
        }
        if let Some(e) = cause.downcast_ref::<mlrecon::Error>() {
            return match e {
                mlrecon::Error::Divergence { .. } | mlrecon::Error::TrackingLost { .. } => EXIT_NUMERIC,
                _ => EXIT_DATA,
            };
        }
    }
    EXIT_DATA
}

fn configure_threads() -> anyhow::Result<()> {
    let Ok(value) = std::env::var("MLRECON_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| UsageError(format!("MLRECON_THREADS must be a positive integer, got `{value}`")))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    configure_threads()?;
    let cfg = load_config(&cli.common)?;
    match cli.command {
        Command::Simulate(a) => commands::simulate(cfg, &a),
        Command::Track(a) => commands::track(cfg, &a),
        Command::RefineTrain(a) => commands::refine_train(cfg, &a),
        Command::RefineApply(a) => commands::refine_apply(cfg, &a),
        Command::CalibrateTemporal(a) => commands::calibrate_temporal(cfg, &a),
        Command::CalibrateSpatial(a) => commands::calibrate_spatial(cfg, &a),
        Command::Compound(a) => commands::compound(cfg, &a),
        Command::Evaluate(a) => commands::evaluate(cfg, &a),
        Command::Report(a) => commands::report(cfg, &a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
