//! Versioned JSON checkpoints and run manifests.
//!
//! Floats are written with round-trip precision, so a reloaded state is
//! bit-identical to the one saved.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::model::{GlobalState, ModelConfig};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub model: ModelConfig,
    /// Outer iterations (batch) or minibatches (stochastic) completed.
    pub iteration: usize,
    pub global: GlobalState,
    /// Expected token mass per topic on the training corpus.
    pub topic_usage: Vec<f64>,
    /// Fitted document locations, one row per training document.
    pub doc_locations: Option<Mat>,
}

impl Checkpoint {
    pub fn new(
        model: ModelConfig,
        iteration: usize,
        global: GlobalState,
        topic_usage: Vec<f64>,
    ) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            model,
            iteration,
            global,
            topic_usage,
            doc_locations: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {} (expected {FORMAT_VERSION})",
                self.format_version
            )));
        }
        self.global
            .validate()
            .map_err(|e| Error::Checkpoint(format!("invalid global state: {e}")))?;
        if self.topic_usage.len() != self.global.n_topics() {
            return Err(Error::Checkpoint(
                "topic usage length does not match the truncation".into(),
            ));
        }
        if let Some(u) = &self.doc_locations {
            if u.cols() != self.global.latent_dim() {
                return Err(Error::Checkpoint(
                    "document locations have the wrong dimension".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Checkpoint = serde_json::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    /// Writes the checkpoint and returns the SHA-256 of the bytes written.
    pub fn save(&self, path: &Path) -> Result<String> {
        let text = self.to_json()?;
        fs::write(path, &text).map_err(Error::file(path))?;
        Ok(sha256_hex(text.as_bytes()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path).map_err(Error::file(path))?)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// What is needed to rerun a training job and check its output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: serde_json::Value,
    pub seed: u64,
    pub version: String,
    pub checkpoint_sha256: String,
}

impl Manifest {
    pub fn new(config: serde_json::Value, seed: u64, checkpoint_sha256: String) -> Self {
        Self {
            config,
            seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            checkpoint_sha256,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?).map_err(Error::file(path))?;
        Ok(())
    }
}
