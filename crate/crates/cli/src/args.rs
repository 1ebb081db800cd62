use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "nbvb",
    version,
    about = "Negative Binomial semiparametric regression by structured variational Bayes"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw a simulated dataset and a table of the true linear predictor.
    Simulate(SimulateArgs),
    /// Batch fit over the full kappa grid.
    Fit(FitArgs),
    /// Warm up on a prefix, then update one observation at a time.
    Stream(StreamArgs),
    /// Re-emit summary tables from a saved snapshot.
    Summarize(SummarizeArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ScenarioArg {
    #[value(name = "additive_2term", alias = "additive2")]
    Additive2Term,
    #[value(name = "nonpar_1term", alias = "nonpar1")]
    Nonpar1Term,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum LinkArg {
    Exp,
    Identity,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, value_enum, default_value = "additive_2term")]
    pub scenario: ScenarioArg,
    /// Number of rows; defaults to 500 or 1000 depending on the scenario.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long, default_value_t = 3.8)]
    pub kappa: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "exp")]
    pub link: LinkArg,
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Clone)]
pub struct ModelArgs {
    /// Name of the count response column.
    #[arg(long, default_value = "y")]
    pub response: String,
    /// Spline term with a given number of interior knots, as NAME=K. Covariates
    /// not listed here or under --linear get --knots interior knots.
    #[arg(long = "spline", value_name = "NAME=K")]
    pub splines: Vec<String>,
    /// Covariate entering linearly only.
    #[arg(long = "linear", value_name = "NAME")]
    pub linear: Vec<String>,
    #[arg(long, default_value_t = 15)]
    pub knots: usize,
    /// Fixed spline domain as LO,HI instead of the data range.
    #[arg(long, value_name = "LO,HI")]
    pub domain: Option<String>,
    #[arg(long, default_value_t = 1e5f64.sqrt())]
    pub sigma_beta: f64,
    #[arg(long, default_value_t = 1e5)]
    pub s_sigma: f64,
    #[arg(long, default_value_t = 0.38)]
    pub kappa_lo: f64,
    #[arg(long, default_value_t = 38.0)]
    pub kappa_hi: f64,
    #[arg(long, default_value_t = 50)]
    pub kappa_size: usize,
    /// Prior log weights are -kappa / rate.
    #[arg(long, default_value_t = 100.0)]
    pub prior_rate: f64,
    #[arg(long, default_value_t = 1e-10)]
    pub tol: f64,
    #[arg(long, default_value_t = 500)]
    pub max_iter: usize,
    /// Fit atoms independently instead of warm-starting in ascending order.
    #[arg(long)]
    pub no_warm_start: bool,
}

#[derive(Debug, Args, Clone, Copy)]
pub struct SummaryArgs {
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    /// Points in each fitted-curve and sigma^2 density table.
    #[arg(long, default_value_t = 201)]
    pub grid_points: usize,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long, short)]
    pub input: PathBuf,
    #[arg(long, short)]
    pub out: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub summary: SummaryArgs,
}

#[derive(Debug, Args)]
pub struct StreamArgs {
    /// Input table, or "-" for standard input.
    #[arg(long, short)]
    pub input: String,
    #[arg(long, short)]
    pub out: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub summary: SummaryArgs,
    #[arg(long, default_value_t = 100)]
    pub n_warm: usize,
    #[arg(long, default_value_t = 3.5)]
    pub tau: f64,
    #[arg(long, default_value_t = 5)]
    pub floor: usize,
    /// Write summaries every this many observations.
    #[arg(long, default_value_t = 50)]
    pub every: u64,
    /// Solve for the Gaussian factor every this many observations.
    #[arg(long, default_value_t = 1)]
    pub thin: u64,
    /// Abort on a malformed line instead of skipping it.
    #[arg(long)]
    pub strict: bool,
    /// Continue from a saved online state; every input row is a new observation.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SummarizeArgs {
    #[arg(long, short)]
    pub snapshot: PathBuf,
    #[arg(long, short)]
    pub out: PathBuf,
    #[command(flatten)]
    pub summary: SummaryArgs,
}
