//! Single-file checkpoints.
//!
//! Layout: the magic `STEPCKPT`, a little-endian `u64` header length, a
//! JSON header, then the raw little-endian payload. The header records the
//! model configuration, training step, RNG position, free-form trainer
//! metadata, the offset of every tensor in every named set (`raw`, `ema`,
//! optimizer moments, ...) and a SHA-256 digest of the payload. Writes go
//! to a temporary sibling first and are renamed into place.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ModelConfig, ModelError, ModelParams};
use crate::autodiff::{Float, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"STEPCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetEntry {
    pub label: String,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub version: u32,
    pub precision: String,
    pub config: ModelConfig,
    pub step: u64,
    pub rng_seed: u64,
    /// ChaCha word position, as a decimal string (it is a `u128`).
    pub rng_word_pos: String,
    pub meta: serde_json::Value,
    pub sets: Vec<SetEntry>,
    pub payload_bytes: usize,
    pub payload_sha256: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub config: ModelConfig,
    pub step: u64,
    pub rng_seed: u64,
    pub rng_word_pos: u128,
    pub meta: serde_json::Value,
    pub sets: Vec<(String, ModelParams<T>)>,
}

impl<T: Float> Checkpoint<T> {
    pub fn set(&self, label: &str) -> Option<&ModelParams<T>> {
        self.sets.iter().find(|(l, _)| l == label).map(|(_, p)| p)
    }
}

fn temp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".partial");
    path.with_file_name(name)
}

pub fn write_checkpoint<T: Float>(path: &Path, ckpt: &Checkpoint<T>) -> Result<(), ModelError> {
    let mut payload = Vec::new();
    let mut sets = Vec::with_capacity(ckpt.sets.len());
    for (label, params) in &ckpt.sets {
        let mut tensors = Vec::with_capacity(params.len());
        for (name, t) in params.names.iter().zip(&params.tensors) {
            let offset = payload.len();
            for &v in t.data() {
                v.write_le(&mut payload);
            }
            tensors.push(TensorEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
                offset,
                len: payload.len() - offset,
            });
        }
        sets.push(SetEntry {
            label: label.clone(),
            tensors,
        });
    }
    let header = CheckpointHeader {
        version: CHECKPOINT_VERSION,
        precision: T::NAME.into(),
        config: ckpt.config.clone(),
        step: ckpt.step,
        rng_seed: ckpt.rng_seed,
        rng_word_pos: ckpt.rng_word_pos.to_string(),
        meta: ckpt.meta.clone(),
        sets,
        payload_bytes: payload.len(),
        payload_sha256: hex::encode(Sha256::digest(&payload)),
    };
    let json = serde_json::to_vec(&header)?;

    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let tmp = temp_path(path);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(CHECKPOINT_MAGIC)?;
        f.write_all(&(json.len() as u64).to_le_bytes())?;
        f.write_all(&json)?;
        f.write_all(&payload)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

fn split_file(bytes: &[u8]) -> Result<(CheckpointHeader, &[u8]), ModelError> {
    if bytes.len() < 16 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(ModelError::Checkpoint("not a checkpoint file".into()));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = &bytes[16..];
    if len > body.len() {
        return Err(ModelError::Checkpoint("header runs past end of file".into()));
    }
    let header: CheckpointHeader = serde_json::from_slice(&body[..len])?;
    if header.version != CHECKPOINT_VERSION {
        return Err(ModelError::Checkpoint(format!(
            "unsupported checkpoint version {}",
            header.version
        )));
    }
    let payload = &body[len..];
    if payload.len() != header.payload_bytes {
        return Err(ModelError::Checkpoint(format!(
            "payload holds {} bytes, header declares {}",
            payload.len(),
            header.payload_bytes
        )));
    }
    Ok((header, payload))
}

pub fn read_checkpoint_header(path: &Path) -> Result<CheckpointHeader, ModelError> {
    let bytes = fs::read(path)?;
    Ok(split_file(&bytes)?.0)
}

pub fn read_checkpoint<T: Float>(path: &Path) -> Result<Checkpoint<T>, ModelError> {
    let bytes = fs::read(path)?;
    let (header, payload) = split_file(&bytes)?;
    if hex::encode(Sha256::digest(payload)) != header.payload_sha256 {
        return Err(ModelError::Checksum(path.display().to_string()));
    }
    if header.precision != T::NAME {
        return Err(ModelError::Precision {
            found: header.precision,
            expected: T::NAME.into(),
        });
    }
    header.config.validate()?;
    let mut sets = Vec::with_capacity(header.sets.len());
    for set in &header.sets {
        let mut names = Vec::new();
        let mut tensors = Vec::new();
        for e in &set.tensors {
            let numel: usize = e.shape.iter().product();
            if e.len != numel * T::BYTES || e.offset + e.len > payload.len() {
                return Err(ModelError::Checkpoint(format!("bad extent for tensor {}", e.name)));
            }
            let data = payload[e.offset..e.offset + e.len]
                .chunks_exact(T::BYTES)
                .map(T::read_le)
                .collect();
            names.push(e.name.clone());
            tensors.push(Tensor::new(e.shape.clone(), data)?);
        }
        sets.push((set.label.clone(), ModelParams { names, tensors }));
    }
    let rng_word_pos = header
        .rng_word_pos
        .parse()
        .map_err(|_| ModelError::Checkpoint("malformed rng position".into()))?;
    Ok(Checkpoint {
        config: header.config,
        step: header.step,
        rng_seed: header.rng_seed,
        rng_word_pos,
        meta: header.meta,
        sets,
    })
}
