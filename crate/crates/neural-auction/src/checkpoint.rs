//! Model checkpoint files.
//!
//! Two-line text format:
//!
//! 1. header: `{"format":"auction-model","version":1,"checksum":"<sha256>"}`
//! 2. payload: one JSON document with the model (explicit tensor shapes),
//!    training progress (optimizer state included, so a resumed run matches
//!    an uninterrupted one), and provenance.
//!
//! The checksum covers the exact payload bytes; any corruption is rejected
//! on load. Floats survive the round trip bit-exactly (shortest-round-trip
//! formatting).

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::model::AuctionModel;
use crate::training::TrainProgress;

pub const CHECKPOINT_FORMAT: &str = "auction-model";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("missing or invalid checkpoint header: {0}")]
    Header(String),
    #[error("unsupported checkpoint version {found} (this build reads version {supported})")]
    Version { found: u32, supported: u32 },
    #[error("checksum mismatch: checkpoint payload is corrupted")]
    Checksum,
    #[error("malformed checkpoint payload: {0}")]
    Payload(String),
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    checksum: String,
}

/// Where a checkpoint came from: the run seed, a fingerprint of the
/// training dataset file, and any notes the writer wants to keep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub data_fingerprint: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub model: AuctionModel,
    pub progress: TrainProgress,
    pub provenance: Provenance,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

/// SHA-256 of a whole file, for dataset fingerprints.
pub fn file_fingerprint(path: impl AsRef<Path>) -> Result<String, CheckpointError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path)
        .map_err(|source| CheckpointError::Io { path: path.to_path_buf(), source })?;
    Ok(sha256_hex(&bytes))
}

pub fn save(path: impl AsRef<Path>, checkpoint: &Checkpoint) -> Result<(), CheckpointError> {
    let path = path.as_ref();
    let io = |source| CheckpointError::Io { path: path.to_path_buf(), source };
    let payload = serde_json::to_string(checkpoint)
        .map_err(|e| CheckpointError::Payload(e.to_string()))?;
    let header = Header {
        format: CHECKPOINT_FORMAT.to_string(),
        version: CHECKPOINT_VERSION,
        checksum: sha256_hex(payload.as_bytes()),
    };
    let file = File::create(path).map_err(io)?;
    let mut out = BufWriter::new(file);
    writeln!(out, "{}", serde_json::to_string(&header).expect("header serializes")).map_err(io)?;
    writeln!(out, "{payload}").map_err(io)?;
    out.flush().map_err(io)
}

pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint, CheckpointError> {
    let path = path.as_ref();
    let io = |source| CheckpointError::Io { path: path.to_path_buf(), source };
    let file = File::open(path).map_err(io)?;
    let mut lines = BufReader::new(file).lines();

    let header_line = lines
        .next()
        .ok_or_else(|| CheckpointError::Header("empty file".into()))?
        .map_err(io)?;
    let header: Header = serde_json::from_str(&header_line)
        .map_err(|e| CheckpointError::Header(e.to_string()))?;
    if header.format != CHECKPOINT_FORMAT {
        return Err(CheckpointError::Header(format!(
            "expected format `{CHECKPOINT_FORMAT}`, got `{}`",
            header.format
        )));
    }
    if header.version != CHECKPOINT_VERSION {
        return Err(CheckpointError::Version { found: header.version, supported: CHECKPOINT_VERSION });
    }

    let payload = lines
        .next()
        .ok_or_else(|| CheckpointError::Payload("missing payload line".into()))?
        .map_err(io)?;
    if sha256_hex(payload.as_bytes()) != header.checksum {
        return Err(CheckpointError::Checksum);
    }
    serde_json::from_str(&payload).map_err(|e| CheckpointError::Payload(e.to_string()))
}
