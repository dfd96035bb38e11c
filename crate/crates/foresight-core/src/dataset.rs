//! On-disk datasets: demonstration chunks and world-model transitions.
//!
//! Both are JSON-lines files with a small header line carrying provenance
//! (kind, seed, layout), followed by one record per line.

use std::io::BufRead;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::env::ExpertMode;
use crate::error::{Error, Result};
use crate::types::{ActionChunk, ObservationVec};

/// One (observation, chunk) pair with its expert mode label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoRecord {
    pub obs: ObservationVec,
    pub chunk: ActionChunk,
    pub mode: ExpertMode,
}

/// One executed chunk transition for world-model training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionRecord {
    pub obs: ObservationVec,
    pub action: ActionChunk,
    pub next_obs: ObservationVec,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub kind: String,
    pub seed: u64,
    pub chunk_h: usize,
    pub n_objects: usize,
}

pub fn write_jsonl<T: Serialize>(
    path: &Path,
    header: &DatasetHeader,
    records: &[T],
) -> Result<()> {
    let mut buf = Vec::new();
    serde_json::to_writer(&mut buf, header)?;
    buf.push(b'\n');
    for rec in records {
        serde_json::to_writer(&mut buf, rec)?;
        buf.push(b'\n');
    }
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<(DatasetHeader, Vec<T>)> {
    let file = std::fs::File::open(path)?;
    let mut lines = std::io::BufReader::new(file).lines();
    let header_line = lines
        .next()
        .ok_or_else(|| Error::Usage(format!("{}: empty dataset file", path.display())))??;
    let header: DatasetHeader = serde_json::from_str(&header_line)?;
    let mut records = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(serde_json::from_str(&line)?);
    }
    Ok((header, records))
}

pub fn expect_kind(header: &DatasetHeader, kind: &str, path: &Path) -> Result<()> {
    if header.kind != kind {
        return Err(Error::Usage(format!(
            "{}: dataset kind `{}` where `{kind}` was expected",
            path.display(),
            header.kind
        )));
    }
    Ok(())
}
