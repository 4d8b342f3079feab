use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use trp_core::eval::DEFAULT_LR_GRID;
use trp_core::model::AggregatorKind;
use trp_core::risk::Estimator;

/// Positive-unlabeled link formation prediction on temporal graphs.
#[derive(Debug, Parser)]
#[command(name = "trp", version, about)]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct Global {
    /// Seed for every stochastic component.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads for pair scoring; results do not depend on it.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, Subcommand, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case")]
pub enum Command {
    /// Build a windowed co-occurrence graph from an annotated corpus.
    BuildGraph(BuildGraphArgs),
    /// Build a graph from a `term_a<TAB>term_b<TAB>window` edge list.
    ImportEdges(ImportEdgesArgs),
    /// Generate a planted-community temporal graph.
    Synth(SynthArgs),
    /// Train a model.
    Train(TrainArgs),
    /// Score the final window's new links.
    Evaluate(EvaluateArgs),
    /// Rank likely future partners of one term.
    Predict(PredictArgs),
    /// Re-run a command from its manifest.
    #[serde(skip)]
    Replay(ReplayArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Self::BuildGraph(_) => "build-graph",
            Self::ImportEdges(_) => "import-edges",
            Self::Synth(_) => "synth",
            Self::Train(_) => "train",
            Self::Evaluate(_) => "evaluate",
            Self::Predict(_) => "predict",
            Self::Replay(_) => "replay",
        }
    }
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct BuildGraphArgs {
    /// JSON-lines corpus.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Term lexicon TSV.
    #[arg(long)]
    pub lexicon: PathBuf,
    /// First year of the first window, which also takes every earlier year.
    #[arg(long)]
    pub start_year: i32,
    /// Window length in years.
    #[arg(long, default_value_t = 10)]
    pub interval: u32,
    #[arg(long)]
    pub windows: usize,
    /// Width of the co-occurrence context features.
    #[arg(long, default_value_t = 300)]
    pub context_dim: usize,
    /// Width of the lexicon description features.
    #[arg(long, default_value_t = 0)]
    pub description_dim: usize,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct ImportEdgesArgs {
    #[arg(long)]
    pub edges: PathBuf,
    /// One feature matrix per window, in window order.
    #[arg(long)]
    pub features: Vec<PathBuf>,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 200)]
    pub nodes: usize,
    #[arg(long, default_value_t = 3)]
    pub communities: usize,
    #[arg(long, default_value_t = 5)]
    pub windows: usize,
    #[arg(long, default_value_t = 16)]
    pub feature_dim: usize,
    #[arg(long, default_value_t = 0.8)]
    pub initial_fraction: f64,
    #[arg(long, default_value_t = 120)]
    pub intra_edges: usize,
    #[arg(long, default_value_t = 10)]
    pub inter_edges: usize,
    #[arg(long, default_value_t = 1.0)]
    pub feature_noise: f64,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub graph: PathBuf,
    #[arg(long, default_value = "upu")]
    pub estimator: Estimator,
    #[arg(long, default_value_t = 5e-3)]
    pub lr: f64,
    /// Pick the learning rate by F1-S on the final window.
    #[arg(long)]
    pub grid_search: bool,
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_LR_GRID)]
    pub lr_grid: Vec<f64>,
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    /// Embedding width.
    #[arg(long, default_value_t = 128)]
    pub dim: usize,
    /// Neighbour sample size per layer.
    #[arg(long, value_delimiter = ',', default_values_t = [20, 10])]
    pub samples: Vec<usize>,
    #[arg(long, default_value = "mean")]
    pub aggregator: AggregatorKind,
    #[arg(long, default_value_t = 64)]
    pub batch_positive: usize,
    #[arg(long, default_value_t = 128)]
    pub batch_unlabeled: usize,
    /// Unlabeled pairs sampled per positive pair.
    #[arg(long, default_value_t = 2.0)]
    pub unlabeled_ratio: f64,
    /// Epochs between class-prior re-estimates; 0 disables them.
    #[arg(long, default_value_t = 1)]
    pub prior_cadence: usize,
    /// Share of positive pairs moved to the unlabeled set.
    #[arg(long, default_value_t = 0.0)]
    pub hidden_fraction: f64,
    /// Train on every window instead of holding out the last.
    #[arg(long)]
    pub all_windows: bool,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub graph: PathBuf,
    /// Retrain and evaluate once per window from `--start`.
    #[arg(long)]
    pub incremental: bool,
    #[arg(long, default_value_t = 2)]
    pub start: usize,
    /// Unlabeled test pairs per test positive.
    #[arg(long, default_value_t = 1.5)]
    pub unlabeled_factor: f64,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub graph: PathBuf,
    /// Term id to rank partners for.
    #[arg(long)]
    pub term: String,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct ReplayArgs {
    /// A `manifest.json` written by an earlier run.
    #[arg(long)]
    pub manifest: PathBuf,
}
