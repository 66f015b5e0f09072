//! Command-line flags. Every subcommand's flags also deserialize from the JSON
//! config file, so all values are optional here and resolved later.

use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

#[derive(Debug, Parser)]
#[command(name = "dirvr", version, about = "Variance-reduced estimation of Dirichlet expectations of exp(nH)")]
pub struct Cli {
    /// JSON file holding defaults for the subcommand's flags; command-line flags take precedence
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// worker threads; 1 is the reference execution and results do not depend on it
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// record wall-clock start and finish times in the manifest
    #[arg(long, global = true)]
    pub timestamps: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic LDA instance
    GenInstance(GenArgs),
    /// Maximize H on an instance and report the KKT structure
    CheckKkt(KktArgs),
    /// Run one estimator on an instance
    Estimate(EstimateArgs),
    /// Run an experiment sweep over instances and document lengths
    Experiment(ExperimentArgs),
    /// Evaluate every document of a corpus against a topic matrix
    EvalCorpus(CorpusArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::GenInstance(_) => "gen-instance",
            Command::CheckKkt(_) => "check-kkt",
            Command::Estimate(_) => "estimate",
            Command::Experiment(_) => "experiment",
            Command::EvalCorpus(_) => "eval-corpus",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Mc,
    Is,
    Cv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    MseRatio,
    CvCorrelation,
    Bias,
    Sparsity,
}

#[derive(Debug, Clone, Default, clap::Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct GenArgs {
    /// number of topics
    #[arg(long = "K")]
    #[serde(rename = "K")]
    pub k: Option<usize>,
    /// vocabulary size [default: 1000]
    #[arg(long = "V")]
    #[serde(rename = "V")]
    pub v: Option<usize>,
    /// planted zeros in the maximizer [default: 0]
    #[arg(long)]
    pub m: Option<usize>,
    /// symmetric Dirichlet parameter of the topic rows [default: 0.1]
    #[arg(long)]
    pub phi_prior: Option<f64>,
    #[arg(long)]
    pub lambda_min: Option<f64>,
    #[arg(long)]
    pub lambda_max: Option<f64>,
    #[arg(long)]
    pub max_retries: Option<usize>,
    /// document length n stored with the instance [default: 1000]
    #[arg(long)]
    pub doc_length: Option<u64>,
    /// build sparsity-controlled topics at this level and sample a document from them
    #[arg(long)]
    pub sparsity: Option<f64>,
    /// [default: $DIRVR_SEED or 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// output file [default: stdout]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, clap::Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct KktArgs {
    /// instance JSON file
    #[arg(long)]
    pub instance: Option<PathBuf>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub zero_tol: Option<f64>,
    #[arg(long)]
    pub kkt_tol: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Sampling flags shared by the estimator-driven commands.
#[derive(Debug, Clone, Default, clap::Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct SamplingArgs {
    /// number of samples [default: 10000]
    #[arg(long = "N")]
    #[serde(rename = "N", default)]
    pub num_samples: Option<usize>,
    /// Dirichlet prior: one value (symmetric) or K comma-separated values [default: 1]
    #[arg(long, value_delimiter = ',')]
    #[serde(default)]
    pub alpha: Option<Vec<f64>>,
    /// importance-sampling exponent in (0, 1) [default: 0.9]
    #[arg(long, value_delimiter = ',')]
    #[serde(default)]
    pub gamma: Option<Vec<f64>>,
    /// truncation level [default: 0.1]
    #[arg(long)]
    #[serde(default)]
    pub epsilon: Option<f64>,
    /// absolute or relative [default: relative]
    #[arg(long)]
    #[serde(default)]
    pub truncation_mode: Option<String>,
    /// samples per parallel chunk [default: 1024]
    #[arg(long)]
    #[serde(default)]
    pub chunk_size: Option<usize>,
    /// permit gamma >= 1
    #[arg(long)]
    #[serde(default)]
    pub allow_unstable_gamma: bool,
    /// [default: $DIRVR_SEED or 0]
    #[arg(long)]
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, clap::Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct EstimateArgs {
    #[arg(long)]
    pub instance: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub method: Option<Method>,
    /// document length [default: the instance's]
    #[arg(long)]
    pub n: Option<f64>,
    /// control-variate coefficient: pooled, pilot or disabled [default: pooled]
    #[arg(long)]
    pub cv_mode: Option<String>,
    #[command(flatten)]
    #[serde(flatten)]
    pub sampling: SamplingArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, clap::Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct ExperimentArgs {
    #[arg(long, value_enum)]
    pub kind: Option<ExperimentKind>,
    /// instance files; generated from the generator flags when absent
    #[arg(long, value_delimiter = ',')]
    pub instances: Option<Vec<PathBuf>>,
    /// generated instances, or kept runs per level for the sparsity sweep [default: 20, sparsity 6]
    #[arg(long)]
    pub count: Option<usize>,
    /// [default: 5, sparsity 10]
    #[arg(long = "K")]
    #[serde(rename = "K")]
    pub k: Option<usize>,
    /// [default: 1000]
    #[arg(long = "V")]
    #[serde(rename = "V")]
    pub v: Option<usize>,
    /// planted zeros of generated instances [default: 0]
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub phi_prior: Option<f64>,
    #[arg(long)]
    pub lambda_min: Option<f64>,
    #[arg(long)]
    pub lambda_max: Option<f64>,
    /// comma-separated document lengths
    #[arg(long, value_delimiter = ',')]
    pub n_grid: Option<Vec<f64>>,
    /// plain Monte Carlo and reference sample budget [default: N]
    #[arg(long = "N-mc")]
    #[serde(rename = "N-mc")]
    pub num_samples_mc: Option<usize>,
    /// closed-form, quadrature or high-precision-is [default: high-precision-is]
    #[arg(long)]
    pub reference: Option<String>,
    /// correlation sampling for cv-correlation and sparsity: prior, weighted or auto [default: weighted]
    #[arg(long)]
    pub rho_sampling: Option<String>,
    /// sparsity levels for the sparsity sweep [default: 1e-7,1e-5,1e-3,0.1,0.5,1,2,5]
    #[arg(long, value_delimiter = ',')]
    pub epsilon_grid: Option<Vec<f64>>,
    /// documents tried per sparsity level before giving up on interior maximizers [default: 40]
    #[arg(long)]
    pub max_attempts: Option<usize>,
    #[command(flatten)]
    #[serde(flatten)]
    pub sampling: SamplingArgs,
    /// directory receiving results.csv and summary.json
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// also write a gnuplot script of the per-n medians
    #[arg(long)]
    #[serde(default)]
    pub emit_gnuplot: bool,
    /// also write an SVG plot of the per-n medians
    #[arg(long)]
    #[serde(default)]
    pub emit_svg: bool,
}

#[derive(Debug, Clone, Default, clap::Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct CorpusArgs {
    /// topic matrix JSON file
    #[arg(long)]
    pub topics: Option<PathBuf>,
    /// corpus JSON-lines file
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// estimators to run [default: mc,is,cv]
    #[arg(long, value_enum, value_delimiter = ',')]
    pub methods: Option<Vec<Method>>,
    #[arg(long)]
    pub reference: Option<String>,
    #[command(flatten)]
    #[serde(flatten)]
    pub sampling: SamplingArgs,
    /// per-document CSV [default: stdout]
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// summary JSON with the length/MSE-ratio rank correlation
    #[arg(long)]
    pub summary: Option<PathBuf>,
}
