use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;

#[derive(Debug, Parser)]
#[command(
    name = "apekit",
    version,
    about = "Average partial effects of a continuous treatment"
)]
pub struct Cli {
    /// Cap on worker threads for replications, folds and resamples.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate the APE on a CSV file.
    #[command(args_override_self = true)]
    Estimate(EstimateArgs),
    /// Run a Monte Carlo grid from a config file or a preset.
    #[command(args_override_self = true)]
    Simulate(SimulateArgs),
    /// Moment-ladder diagnostics of the treatment residuals.
    #[command(args_override_self = true)]
    Diagnose(DiagnoseArgs),
    /// The imperfect-training R-OLS versus DML experiment.
    #[command(args_override_self = true)]
    Figure1(Figure1Args),
}

#[derive(Debug, Args, Clone)]
pub struct DataArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub outcome: String,
    #[arg(long)]
    pub treatment: String,
    /// Comma-separated control columns.
    #[arg(long, value_delimiter = ',', required = false)]
    pub controls: Vec<String>,
    #[arg(long)]
    pub instrument: Option<String>,
    /// Column holding the known treatment error.
    #[arg(long)]
    pub nu_column: Option<String>,
}

#[derive(Debug, Args, Clone)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// rols, rols_ml, dml, simple_ols, interacted_ols, pl_spline or iv.
    #[arg(long, default_value = "rols")]
    pub method: String,
    /// Learner for rols_ml.
    #[arg(long)]
    pub learner: Option<String>,
    #[arg(long)]
    pub learner_r: Option<String>,
    #[arg(long)]
    pub learner_l: Option<String>,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    /// Fit the learner on the full sample instead of cross-fitting.
    #[arg(long)]
    pub in_sample: bool,
    /// Polynomial degree for interacted_ols, spline degree for pl_spline.
    #[arg(long, default_value_t = 3)]
    pub degree: usize,
    #[arg(long, default_value_t = 5)]
    pub knots: usize,
    /// Bootstrap resamples; 0 skips the bootstrap.
    #[arg(long, default_value_t = 0)]
    pub bootstrap: usize,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Seed; falls back to APE_SEED, then 1.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output prefix; writes PREFIX.csv, PREFIX.txt, PREFIX.json and PREFIX.cfg.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Clone)]
pub struct SimulateArgs {
    /// Grid config with [grid] sections.
    #[arg(long, conflicts_with = "preset")]
    pub grid: Option<PathBuf>,
    /// table3 .. table7 or figure1.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Replace the sample sizes of every grid (comma-separated).
    #[arg(long, value_delimiter = ',')]
    pub n: Vec<usize>,
    /// Full replication count and sample sizes (10000 reps).
    #[arg(long)]
    pub full_scale: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Clone)]
pub struct DiagnoseArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Residualise the treatment with this learner (cross-fitted).
    #[arg(long)]
    pub learner: Option<String>,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    #[arg(long, default_value_t = 5)]
    pub max_order: usize,
    #[arg(long, default_value_t = 200)]
    pub boot: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Clone)]
pub struct Figure1Args {
    #[arg(long, default_value_t = 200)]
    pub reps: usize,
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    /// Inclusive epoch range `LO:HI`.
    #[arg(long, default_value = "50:200")]
    pub epochs: String,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}
