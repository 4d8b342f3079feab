//! Neighbourhood aggregator, recurrent pair update and linear classifier.

mod forward;
mod params;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use forward::{
    aggregate, classify, forward_batch, maxpool_combine, pair_score_sequence, pair_update, sample_tree,
    score_pairs, tree_seed, BatchOutput, SampledTree, SCORE_CHUNK,
};
pub use params::{AggLayer, ClassifierParams, GruParams, ModelParams, Params, Pool};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("node {node} is not present at time step {t}")]
    NodeNotPresent { node: usize, t: usize },
    #[error("time step {t} out of range 1..={len}")]
    TimeOutOfRange { t: usize, len: usize },
    #[error("feature dimension {graph} of the graph does not match the model's {model}")]
    FeatureDim { graph: usize, model: usize },
    #[error("parameter `{name}`: {problem}")]
    Parameter { name: String, problem: String },
    #[error("invalid model configuration: {0}")]
    Config(String),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AggregatorKind {
    #[default]
    Mean,
    #[serde(rename = "maxpool")]
    MaxPool,
}

impl FromStr for AggregatorKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "mean" => Ok(Self::Mean),
            "maxpool" | "max-pool" | "pool" => Ok(Self::MaxPool),
            other => Err(format!("unknown aggregator `{other}` (expected mean or maxpool)")),
        }
    }
}

impl fmt::Display for AggregatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Mean => "mean",
            Self::MaxPool => "maxpool",
        })
    }
}

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub feature_dim: usize,
    /// Width `d` of node and pair embeddings.
    pub dim: usize,
    /// Neighbour sample size per aggregation layer; its length is the depth `M`.
    pub sample_sizes: Vec<usize>,
    pub aggregator: AggregatorKind,
}

impl ModelConfig {
    pub fn new(feature_dim: usize, dim: usize, sample_sizes: Vec<usize>) -> Self {
        Self {
            feature_dim,
            dim,
            sample_sizes,
            aggregator: AggregatorKind::Mean,
        }
    }

    pub fn depth(&self) -> usize {
        self.sample_sizes.len()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.feature_dim == 0 || self.dim == 0 {
            return Err(ModelError::Config("dimensions must be positive".into()));
        }
        if self.sample_sizes.is_empty() || self.sample_sizes.contains(&0) {
            return Err(ModelError::Config("sample sizes must be non-empty and positive".into()));
        }
        Ok(())
    }
}
