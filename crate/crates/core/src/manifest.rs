//! Run manifests: what produced a results directory.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{LareError, Result};

pub const MANIFEST_FILE: &str = "manifest.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Hash of the effective (merged) configuration text.
    pub config_hash: String,
    pub dataset_hash: String,
    pub seed: u64,
    pub tool_version: String,
    pub threads: usize,
    pub wall_seconds: f64,
    #[serde(default)]
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, effective_config: &str, dataset_hash: &str, seed: u64, threads: usize) -> Self {
        RunManifest {
            command: command.to_string(),
            config_hash: text_hash(effective_config),
            dataset_hash: dataset_hash.to_string(),
            seed,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            threads,
            wall_seconds: 0.0,
            outputs: Vec::new(),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST_FILE);
        let text = toml::to_string(self).map_err(|e| LareError::format(&path, e.to_string()))?;
        fs::write(&path, text).map_err(|e| LareError::io(&path, e))
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| LareError::io(&path, e))?;
        toml::from_str(&text).map_err(|e| LareError::format(&path, e.to_string()))
    }
}

pub fn text_hash(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}
