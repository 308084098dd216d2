use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "nb", version, about = "Normal-Block models: joint variable clustering and cluster-level networks")]
pub struct Cli {
    /// Worker threads for parallel sweeps (default: available parallelism).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw a dataset and its ground truth.
    Simulate(SimulateArgs),
    /// Fit one model.
    Fit(FitArgs),
    /// Sweep the number of clusters or the penalty and keep the best model.
    Select(SelectArgs),
    /// Choose the penalty by subsampling stability.
    Stars(StarsArgs),
    /// Compare a fitted model with a simulation truth.
    Metrics(MetricsArgs),
    /// Run a replicated simulation study.
    Experiment(ExperimentArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StructureArg {
    Er,
    Pa,
    Community,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum NoiseArg {
    Diagonal,
    Spherical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Vem,
    Em,
    TwoStep,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ClusteringArg {
    Kmeans,
    Spectral,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CriterionArg {
    Bic,
    Ebic,
    Icl,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, value_enum, default_value = "er")]
    pub structure: StructureArg,
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub p: usize,
    #[arg(long)]
    pub q: usize,
    #[arg(long, value_enum, default_value = "diagonal")]
    pub noise: NoiseArg,
    /// Mean of the per-variable zero probabilities; omit for no inflation.
    #[arg(long)]
    pub zi_mean: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

/// Data inputs shared by the fitting commands.
#[derive(Debug, Args)]
pub struct DataArgs {
    #[arg(long, default_value = "Y.csv")]
    pub y: PathBuf,
    /// Covariates; an intercept column is used when omitted.
    #[arg(long)]
    pub x: Option<PathBuf>,
    /// Known clustering, one 1-based label per variable.
    #[arg(long)]
    pub clusters: Option<PathBuf>,
}

/// Iteration controls shared by the fitting commands.
#[derive(Debug, Args)]
pub struct FitControl {
    #[arg(long, value_enum, default_value = "diagonal")]
    pub noise: NoiseArg,
    /// Zero-inflated model (diagonal noise only).
    #[arg(long)]
    pub zi: bool,
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    #[arg(long, default_value_t = 500)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub control: FitControl,
    /// Number of clusters; required unless --clusters is given.
    #[arg(long)]
    pub q: Option<usize>,
    #[arg(long, default_value_t = 0.0)]
    pub lambda: f64,
    #[arg(long, value_enum, default_value = "vem")]
    pub method: MethodArg,
    /// Variable clustering used by the two-step method.
    #[arg(long, value_enum, default_value = "kmeans")]
    pub clustering: ClusteringArg,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub control: FitControl,
    /// Cluster counts to compare, e.g. `1,2,3`; the penalty is then fixed
    /// at --lambda.
    #[arg(long, value_delimiter = ',')]
    pub qs: Vec<usize>,
    /// Number of clusters for a penalty sweep (or use --clusters).
    #[arg(long)]
    pub q: Option<usize>,
    #[arg(long, default_value_t = 0.0)]
    pub lambda: f64,
    /// Penalties to compare; defaults to a grid built from the unpenalised fit.
    #[arg(long, value_delimiter = ',')]
    pub lambdas: Vec<f64>,
    #[arg(long, default_value_t = 30)]
    pub lambda_points: usize,
    #[arg(long, default_value_t = 0.01)]
    pub min_ratio: f64,
    #[arg(long, value_enum, default_value = "bic")]
    pub criterion: CriterionArg,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct StarsArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub control: FitControl,
    /// Number of clusters, fixed from the unpenalised latent fit (or use --clusters).
    #[arg(long)]
    pub q: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub lambdas: Vec<f64>,
    #[arg(long, default_value_t = 30)]
    pub lambda_points: usize,
    #[arg(long, default_value_t = 0.01)]
    pub min_ratio: f64,
    #[arg(long, default_value_t = 0.8)]
    pub threshold: f64,
    #[arg(long, default_value_t = 20)]
    pub subsamples: usize,
    #[arg(long, default_value_t = 0.8)]
    pub ratio: f64,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    #[arg(long, default_value = "model.json")]
    pub model: PathBuf,
    #[arg(long, default_value = "truth.json")]
    pub truth: PathBuf,
    #[arg(long, default_value = "metrics.csv")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    #[arg(long, value_enum, value_delimiter = ',', default_value = "er")]
    pub structures: Vec<StructureArg>,
    #[arg(long, value_delimiter = ',', default_value = "50")]
    pub ns: Vec<usize>,
    #[arg(long, default_value_t = 100)]
    pub p: usize,
    #[arg(long, value_delimiter = ',', default_value = "3")]
    pub qs: Vec<usize>,
    #[arg(long, default_value_t = 20)]
    pub replicates: usize,
    /// Comma-separated method names: em-observed, vem, two-step-kmeans,
    /// two-step-spectral, zi-vem, zi-two-step.
    #[arg(long, value_delimiter = ',', default_value = "vem,two-step-kmeans")]
    pub methods: Vec<String>,
    #[arg(long)]
    pub zi_mean: Option<f64>,
    #[arg(long, default_value_t = 30)]
    pub lambda_points: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "experiment.csv")]
    pub out: PathBuf,
}
