//! `dispsharp`: reproducible experiments on cost-volume uncertainty.
//!
//! Exit codes: 0 success, 1 a check failed, 2 usage or input error.
//! `DISPSHARP_THREADS` caps the worker thread count.

mod commands;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use dispsharp::toy::ToyCase;
use dispsharp::uncertainty::DEFAULT_PER_SCALE;
use dispsharp::{MatcherKind, UncertaintyMetric, DEFAULT_TEMPERATURE};

pub const THREADS_ENV: &str = "DISPSHARP_THREADS";

#[derive(Parser)]
#[command(name = "dispsharp", version, about = "Uncertainty-aware disparity readout experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Disparity and uncertainty from a scene config, an image pair or a cost volume.
    Estimate(EstimateArgs),
    /// Compare analytic gradients with central finite differences.
    Gradcheck(GradcheckArgs),
    /// Follow the loss gradient on a single cost vector.
    AdaptSim(AdaptSimArgs),
    /// Sparsification curve of a prediction ordered by uncertainty.
    Roc(RocArgs),
    /// Drop the most uncertain pixels of a prediction.
    Pseudo(PseudoArgs),
    /// D1_all, bad-1.0 and EPE of a prediction.
    Metrics(MetricsArgs),
    /// Composite experiments.
    #[command(subcommand)]
    Bench(BenchCommand),
}

#[derive(Subcommand)]
enum BenchCommand {
    /// Clean vs noisy stereogram: uncertainty shift, sparsification, pseudo-labels.
    DomainShift(DomainShiftArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum MetricArg {
    Msm,
    Entropy,
    Per,
}

#[derive(Args, Clone, Copy)]
pub struct MetricOpts {
    /// Uncertainty metric.
    #[arg(long, value_enum, default_value = "entropy")]
    pub metric: MetricArg,
    /// PER kernel width.
    #[arg(long, default_value_t = DEFAULT_PER_SCALE)]
    pub s: f64,
}

impl MetricOpts {
    pub fn metric(&self) -> Result<UncertaintyMetric> {
        Ok(match self.metric {
            MetricArg::Msm => UncertaintyMetric::Msm,
            MetricArg::Entropy => UncertaintyMetric::Entropy,
            MetricArg::Per => UncertaintyMetric::per(self.s)?,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum MatcherArg {
    Sad,
    Census,
}

impl From<MatcherArg> for MatcherKind {
    fn from(m: MatcherArg) -> Self {
        match m {
            MatcherArg::Sad => MatcherKind::Sad,
            MatcherArg::Census => MatcherKind::Census,
        }
    }
}

#[derive(Args)]
pub struct EstimateArgs {
    /// Scene config (JSON) to synthesize a stereogram from.
    #[arg(long, conflicts_with_all = ["left", "volume"])]
    pub scene: Option<PathBuf>,
    /// Left image (PGM or 8-bit PNG).
    #[arg(long, requires = "right", conflicts_with = "volume")]
    pub left: Option<PathBuf>,
    #[arg(long, requires = "left")]
    pub right: Option<PathBuf>,
    /// Cost volume in raw volume format.
    #[arg(long)]
    pub volume: Option<PathBuf>,
    /// Largest disparity for image inputs; scene configs carry their own.
    #[arg(long)]
    pub d_max: Option<usize>,
    #[arg(long, value_enum, default_value = "census")]
    pub matcher: MatcherArg,
    #[arg(long, default_value_t = 9)]
    pub window: usize,
    /// Softmax temperature.
    #[arg(long, default_value_t = DEFAULT_TEMPERATURE)]
    pub t: f64,
    #[command(flatten)]
    pub metric: MetricOpts,
    /// Also write the cost volume.
    #[arg(long)]
    pub save_volume: bool,
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct GradcheckArgs {
    /// Finite-difference step.
    #[arg(long, default_value_t = dispsharp::gradcheck::DEFAULT_STEP)]
    pub h: f64,
    /// Also report steps 1e-4 and 1e-6; only `--h` decides the exit code.
    #[arg(long)]
    pub sweep: bool,
    #[arg(long, value_enum, default_value = "none")]
    pub inject_fault: FaultArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 100)]
    pub samples: usize,
    #[arg(long, default_value_t = DEFAULT_PER_SCALE)]
    pub s: f64,
    /// Write the table as CSV here instead of stdout.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum FaultArg {
    None,
    SignFlip,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum CaseArg {
    Fig5a,
    Fig5b,
    Bimodal,
    Uniform,
}

impl From<CaseArg> for ToyCase {
    fn from(c: CaseArg) -> Self {
        match c {
            CaseArg::Fig5a => ToyCase::Fig5a,
            CaseArg::Fig5b => ToyCase::Fig5b,
            CaseArg::Bimodal => ToyCase::Bimodal,
            CaseArg::Uniform => ToyCase::Uniform,
        }
    }
}

#[derive(Args)]
pub struct AdaptSimArgs {
    /// Named starting point.
    #[arg(long, value_enum, required_unless_present = "costs", conflicts_with = "costs")]
    pub case: Option<CaseArg>,
    /// Comma-separated cost vector.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub costs: Option<Vec<f64>>,
    /// Label; defaults to the case's label if it has one.
    #[arg(long)]
    pub gt: Option<f64>,
    /// Temperature; defaults to 16, or 1 for unlabeled runs.
    #[arg(long)]
    pub t: Option<f64>,
    /// Uncertainty weight; defaults to the metric's weight, or 1 for unlabeled runs.
    #[arg(long)]
    pub lambda: Option<f64>,
    #[command(flatten)]
    pub metric: MetricOpts,
    #[arg(long, default_value_t = 0.05)]
    pub step_size: f64,
    #[arg(long, default_value_t = 2000)]
    pub max_steps: usize,
    #[arg(long)]
    pub no_line_search: bool,
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct RocArgs {
    /// Predicted disparity (PFM or PNG16).
    #[arg(long)]
    pub pred: PathBuf,
    /// Ground truth (PFM or PNG16); its invalid pixels are ignored.
    #[arg(long)]
    pub gt: PathBuf,
    /// Uncertainty values (PFM).
    #[arg(long)]
    pub uncertainty: PathBuf,
    #[arg(long, default_value_t = 0.05)]
    pub step: f64,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: OutputFormat,
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    Csv,
    Json,
}

#[derive(Args)]
pub struct PseudoArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub uncertainty: PathBuf,
    /// Percentage of pixels to drop, in (0, 100).
    #[arg(long, default_value_t = dispsharp::pseudo_label::DEFAULT_DELTA_PERCENT)]
    pub delta: f64,
    /// Ground truth; adds dense and retained D1 to the summary.
    #[arg(long)]
    pub gt: Option<PathBuf>,
    /// Output PNG16 pseudo-label.
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct MetricsArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct DomainShiftArgs {
    #[arg(long, default_value_t = 11)]
    pub seed: u64,
    #[arg(long, default_value_t = 20.0)]
    pub noise: f64,
    #[arg(long, default_value_t = DEFAULT_TEMPERATURE)]
    pub t: f64,
    #[arg(long, value_enum, default_value = "census")]
    pub matcher: MatcherArg,
    #[arg(long, default_value_t = 9)]
    pub window: usize,
    #[arg(long, default_value_t = DEFAULT_PER_SCALE)]
    pub s: f64,
    #[arg(long, default_value_t = dispsharp::pseudo_label::DEFAULT_DELTA_PERCENT)]
    pub delta: f64,
    /// Directory for the JSON summary.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .with_context(|| format!("{THREADS_ENV} must be a positive integer, got {raw:?}"))?;
    if rayon::ThreadPoolBuilder::new().num_threads(n).build_global().is_err() {
        bail!("thread pool already initialized");
    }
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    configure_threads()?;
    match cli.command {
        Command::Estimate(a) => commands::estimate(&a),
        Command::Gradcheck(a) => commands::gradcheck(&a),
        Command::AdaptSim(a) => commands::adapt_sim(&a),
        Command::Roc(a) => commands::roc(&a),
        Command::Pseudo(a) => commands::pseudo(&a),
        Command::Metrics(a) => commands::metrics(&a),
        Command::Bench(BenchCommand::DomainShift(a)) => commands::domain_shift(&a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
