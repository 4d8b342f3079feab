use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::args::{Command, Global};
use crate::Failure;

pub const FILE: &str = "manifest.json";

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InputHash {
    pub path: PathBuf,
    pub sha256: String,
}

/// Everything needed to re-run a command.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub seed: u64,
    pub threads: usize,
    pub out: PathBuf,
    pub command: Command,
    /// Library configurations derived from the flags.
    pub resolved: serde_json::Value,
    pub inputs: Vec<InputHash>,
}

/// SHA-256 of a file, or of a directory's sorted `(name, file hash)` list.
pub fn hash_path(path: &Path) -> Result<String, Failure> {
    let meta = fs::metadata(path).map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
    if meta.is_file() {
        let bytes = fs::read(path).map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
        return Ok(hex::encode(Sha256::digest(bytes)));
    }
    let mut entries: Vec<_> = fs::read_dir(path)
        .map_err(|e| Failure::input(format!("{}: {e}", path.display())))?
        .collect::<Result<_, _>>()
        .map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
    entries.sort_by_key(|e| e.file_name());
    let mut h = Sha256::new();
    for e in entries {
        h.update(e.file_name().to_string_lossy().as_bytes());
        h.update([0]);
        h.update(hash_path(&e.path())?.as_bytes());
    }
    Ok(hex::encode(h.finalize()))
}

pub fn hash_inputs(paths: &[&Path]) -> Result<Vec<InputHash>, Failure> {
    paths
        .iter()
        .map(|p| {
            Ok(InputHash {
                path: p.to_path_buf(),
                sha256: hash_path(p)?,
            })
        })
        .collect()
}

impl RunManifest {
    pub fn new(global: &Global, out: &Path, command: &Command, resolved: serde_json::Value, inputs: Vec<InputHash>) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            seed: global.seed,
            threads: global.threads,
            out: out.to_path_buf(),
            command: command.clone(),
            resolved,
            inputs,
        }
    }

    pub fn write(&self, out: &Path) -> Result<(), Failure> {
        crate::write_json(&out.join(FILE), self)
    }

    pub fn read(path: &Path) -> Result<Self, Failure> {
        let text = fs::read_to_string(path).map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Failure::input(format!("{}: {e}", path.display())))
    }

    /// Fails when an input changed since the manifest was written.
    pub fn verify_inputs(&self) -> Result<(), Failure> {
        for input in &self.inputs {
            let now = hash_path(&input.path)?;
            if now != input.sha256 {
                return Err(Failure::input(format!(
                    "input {} changed since the run (sha256 {} now {})",
                    input.path.display(),
                    input.sha256,
                    now
                )));
            }
        }
        Ok(())
    }
}
