//! Experiment manifests: every artifact a command emits is traceable to the
//! exact config, seed, and input hashes that produced it.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::checkpoint::{file_sha256, sha256_hex};
use crate::config::Config;
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentManifest {
    /// Content id: hash over (config, seed, inputs). `created_at` and
    /// `outputs` are deliberately excluded so identical runs share an id and
    /// reports referencing it stay byte-identical across re-runs.
    pub id: String,
    pub config: Config,
    pub seed: u64,
    /// Input artifact name -> sha256.
    pub inputs: BTreeMap<String, String>,
    /// Output artifact name -> sha256; bookkeeping only.
    pub outputs: BTreeMap<String, String>,
    /// Unix seconds at creation.
    pub created_at: u64,
}

impl ExperimentManifest {
    pub fn new(config: &Config, inputs: BTreeMap<String, String>) -> Self {
        let identity = serde_json::json!({
            "config": config,
            "seed": config.seed,
            "inputs": inputs,
        });
        let id = sha256_hex(identity.to_string().as_bytes());
        ExperimentManifest {
            id,
            config: config.clone(),
            seed: config.seed,
            inputs,
            outputs: BTreeMap::new(),
            created_at: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        }
    }

    pub fn add_input(inputs: &mut BTreeMap<String, String>, name: &str, path: &Path) -> Result<()> {
        inputs.insert(name.to_string(), file_sha256(path)?);
        Ok(())
    }

    pub fn record_output(&mut self, name: &str, path: &Path) -> Result<()> {
        self.outputs.insert(name.to_string(), file_sha256(path)?);
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn id_ignores_outputs_and_timestamps() {
        let cfg = Config::default();
        let mut a = ExperimentManifest::new(&cfg, BTreeMap::new());
        let b = ExperimentManifest::new(&cfg, BTreeMap::new());
        a.created_at = 1;
        a.outputs.insert("x".into(), "y".into());
        assert_eq!(a.id, b.id);
    }

    #[test]
    fn id_tracks_config_and_inputs() {
        let cfg = Config::default();
        let base = ExperimentManifest::new(&cfg, BTreeMap::new());
        let other_cfg = ExperimentManifest::new(&Config { seed: 9, ..Config::default() }, BTreeMap::new());
        assert_ne!(base.id, other_cfg.id);
        let mut inputs = BTreeMap::new();
        inputs.insert("demos".into(), "abc".into());
        let other_inputs = ExperimentManifest::new(&cfg, inputs);
        assert_ne!(base.id, other_inputs.id);
    }
}
