//! Trained models as checkpoint files.

use std::path::Path;

use serde::de::DeserializeOwned;
use thiserror::Error;
use trp_autodiff::{AutodiffError, Checkpoint};

use crate::model::{ModelConfig, ModelError, ModelParams};
use crate::train::{History, TrainConfig};

pub const FORMAT: &str = "trp-model-1";

#[derive(Debug, Error)]
pub enum ArtifactError {
    #[error(transparent)]
    Checkpoint(#[from] AutodiffError),
    #[error("checkpoint metadata: {0}")]
    Meta(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Parameters with everything needed to use or retrain them.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainedModel {
    pub params: ModelParams,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub history: History,
    /// Number of windows the model was trained on.
    pub trained_windows: usize,
}

fn meta_json<T: DeserializeOwned>(ckpt: &Checkpoint, key: &str) -> Result<T, ArtifactError> {
    let raw = ckpt
        .meta
        .get(key)
        .ok_or_else(|| ArtifactError::Meta(format!("missing `{key}`")))?;
    serde_json::from_str(raw).map_err(|e| ArtifactError::Meta(format!("`{key}`: {e}")))
}

impl TrainedModel {
    pub fn to_checkpoint(&self) -> Checkpoint {
        let json = |v: serde_json::Result<String>| v.expect("configs serialize");
        let mut ckpt = Checkpoint::default();
        ckpt.meta.insert("format".into(), FORMAT.into());
        ckpt.meta.insert("model".into(), json(serde_json::to_string(&self.model)));
        ckpt.meta.insert("train".into(), json(serde_json::to_string(&self.train)));
        ckpt.meta.insert("history".into(), json(serde_json::to_string(&self.history)));
        ckpt.meta.insert("trained_windows".into(), self.trained_windows.to_string());
        ckpt.tensors = self
            .params
            .named()
            .into_iter()
            .map(|(n, t)| (n, t.clone()))
            .collect();
        ckpt
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self, ArtifactError> {
        match ckpt.meta.get("format") {
            Some(f) if f == FORMAT => {}
            Some(f) => return Err(ArtifactError::Meta(format!("unsupported format `{f}`"))),
            None => return Err(ArtifactError::Meta("missing `format`".into())),
        }
        let model: ModelConfig = meta_json(ckpt, "model")?;
        model.validate()?;
        let params = ModelParams::from_lookup(&model, |name| ckpt.get(name).cloned())?;
        Ok(Self {
            params,
            train: meta_json(ckpt, "train")?,
            history: meta_json(ckpt, "history")?,
            trained_windows: meta_json(ckpt, "trained_windows")?,
            model,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), ArtifactError> {
        Ok(self.to_checkpoint().save(path)?)
    }

    pub fn load(path: &Path) -> Result<Self, ArtifactError> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}
