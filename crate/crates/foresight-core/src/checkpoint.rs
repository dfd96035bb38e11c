//! Versioned JSON checkpoints for the two learned components.
//!
//! Layout (format version 1): a small envelope with `format_version`,
//! `kind`, and a `config_fingerprint`, wrapping the serialized component —
//! layer dimensions followed by row-major parameter arrays, exactly as the
//! `nn` types serialize. The world-model checkpoint embeds its codebook; the
//! codebook is additionally written as a standalone JSON file of
//! per-dimension code arrays for external consumers.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::Config;
use crate::diffusion::DiffusionPolicy;
use crate::error::{Error, Result};
use crate::worldmodel::{Codebook, WorldModel};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Envelope<T> {
    format_version: u32,
    kind: String,
    config_fingerprint: String,
    payload: T,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

pub fn file_sha256(path: &Path) -> Result<String> {
    Ok(sha256_hex(&std::fs::read(path)?))
}

/// Stable fingerprint of a config (hash of its canonical JSON).
pub fn config_fingerprint(cfg: &Config) -> String {
    sha256_hex(serde_json::to_string(cfg).expect("config serializes").as_bytes())
}

fn save<T: Serialize>(path: &Path, kind: &str, fingerprint: &str, payload: &T) -> Result<()> {
    let envelope = Envelope {
        format_version: FORMAT_VERSION,
        kind: kind.to_string(),
        config_fingerprint: fingerprint.to_string(),
        payload,
    };
    std::fs::write(path, serde_json::to_vec(&envelope)?)?;
    Ok(())
}

fn load<T: serde::de::DeserializeOwned>(path: &Path, kind: &str) -> Result<(T, String)> {
    let bytes = std::fs::read(path)?;
    let envelope: Envelope<T> = serde_json::from_slice(&bytes)?;
    if envelope.format_version != FORMAT_VERSION {
        return Err(Error::Usage(format!(
            "{}: checkpoint format v{} unsupported (expected v{FORMAT_VERSION})",
            path.display(),
            envelope.format_version
        )));
    }
    if envelope.kind != kind {
        return Err(Error::Usage(format!(
            "{}: checkpoint kind `{}` where `{kind}` was expected",
            path.display(),
            envelope.kind
        )));
    }
    Ok((envelope.payload, envelope.config_fingerprint))
}

pub fn save_policy(path: &Path, policy: &DiffusionPolicy, cfg: &Config) -> Result<()> {
    save(path, "policy", &config_fingerprint(cfg), policy)
}

pub fn load_policy(path: &Path) -> Result<(DiffusionPolicy, String)> {
    load(path, "policy")
}

pub fn save_worldmodel(path: &Path, model: &WorldModel, cfg: &Config) -> Result<()> {
    save(path, "worldmodel", &config_fingerprint(cfg), model)
}

pub fn load_worldmodel(path: &Path) -> Result<(WorldModel, String)> {
    load(path, "worldmodel")
}

/// Standalone codebook file: a JSON array of per-dimension code arrays.
pub fn save_codebook(path: &Path, codebook: &Codebook) -> Result<()> {
    std::fs::write(path, serde_json::to_vec(&codebook.codes)?)?;
    Ok(())
}
