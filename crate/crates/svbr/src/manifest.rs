//! Run provenance embedded in every output artifact.

use crate::error::Result;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::Path;

/// Identity of a run. The deterministic part (config hash, seed, engine
/// version, input digests) fully determines the output bytes; the wall
/// clock is informational and is stripped from the copy embedded in
/// byte-reproducible artifacts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub seed: u64,
    pub engine_version: String,
    pub input_digests: BTreeMap<String, String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub wall_clock_secs: Option<f64>,
}

impl RunManifest {
    pub fn new(config_hash: String, seed: u64) -> Self {
        RunManifest {
            config_hash,
            seed,
            engine_version: env!("CARGO_PKG_VERSION").to_string(),
            input_digests: BTreeMap::new(),
            wall_clock_secs: None,
        }
    }

    pub fn digest_input(&mut self, label: &str, path: &Path) -> Result<()> {
        let bytes = std::fs::read(path)?;
        self.input_digests
            .insert(label.to_string(), sha256_hex(&bytes));
        Ok(())
    }

    /// Copy without runtime-only fields.
    pub fn deterministic(&self) -> RunManifest {
        RunManifest {
            wall_clock_secs: None,
            ..self.clone()
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    hex::encode(hasher.finalize())
}
