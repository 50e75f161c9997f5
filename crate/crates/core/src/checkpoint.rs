//! Binary model checkpoints: magic header, config echo, named parameter
//! groups as little-endian f64, and a SHA-256 content checksum.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::config::RunConfig;
use crate::nn::ParamStore;

pub const MAGIC: &[u8; 5] = b"CAUS1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("bad checkpoint magic (not a CAUS1 file)")]
    BadMagic,
    #[error("checkpoint truncated while reading {0}")]
    Truncated(&'static str),
    #[error("checkpoint checksum mismatch: file is corrupt")]
    ChecksumMismatch,
    #[error("config echo is not valid: {0}")]
    BadConfig(#[from] serde_json::Error),
    #[error("checkpoint incompatible with model: missing group '{0}'")]
    MissingGroup(String),
    #[error("checkpoint incompatible with model: group '{name}' has shape {found:?}, model expects {expected:?}")]
    GroupShapeMismatch { name: String, found: Vec<usize>, expected: Vec<usize> },
}

/// Everything needed to rebuild the trained model: the effective run
/// config plus the data dimensions taken from the corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub run: RunConfig,
    pub d_x: usize,
    pub d_v: usize,
    pub k_classes: usize,
    pub vocab_size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub groups: Vec<(String, Vec<usize>, Vec<f64>)>,
}

pub fn encode(meta: &CheckpointMeta, store: &ParamStore) -> Result<Vec<u8>, CheckpointError> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    let cfg_json = serde_json::to_vec(meta)?;
    buf.extend_from_slice(&(cfg_json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&cfg_json);
    buf.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for group in store.groups() {
        let name = group.name.as_bytes();
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name);
        buf.extend_from_slice(&(group.shape.len() as u32).to_le_bytes());
        for &d in &group.shape {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in &group.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    Ok(buf)
}

pub fn save(path: &Path, meta: &CheckpointMeta, store: &ParamStore) -> Result<(), CheckpointError> {
    std::fs::write(path, encode(meta, store)?)?;
    Ok(())
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
    if bytes.len() < MAGIC.len() + 32 {
        return Err(CheckpointError::Truncated("header"));
    }
    if &bytes[..MAGIC.len()] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let (body, checksum) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != checksum {
        return Err(CheckpointError::ChecksumMismatch);
    }

    let mut off = MAGIC.len();
    let mut take = |n: usize, what: &'static str| -> Result<&[u8], CheckpointError> {
        if off + n > body.len() {
            return Err(CheckpointError::Truncated(what));
        }
        let s = &body[off..off + n];
        off += n;
        Ok(s)
    };
    let read_u32 = |b: &[u8]| u32::from_le_bytes(b.try_into().unwrap()) as usize;

    let cfg_len = read_u32(take(4, "config length")?);
    let meta: CheckpointMeta = serde_json::from_slice(take(cfg_len, "config echo")?)?;
    let n_groups = read_u32(take(4, "group count")?);
    let mut groups = Vec::with_capacity(n_groups);
    for _ in 0..n_groups {
        let name_len = read_u32(take(4, "group name length")?);
        let name = String::from_utf8_lossy(take(name_len, "group name")?).into_owned();
        let ndim = read_u32(take(4, "group rank")?);
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(read_u32(take(4, "group shape")?));
        }
        let numel: usize = shape.iter().product();
        let raw = take(numel * 8, "group data")?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        groups.push((name, shape, data));
    }
    if off != body.len() {
        return Err(CheckpointError::Truncated("trailing bytes"));
    }
    Ok(Checkpoint { meta, groups })
}

pub fn load(path: &Path) -> Result<Checkpoint, CheckpointError> {
    decode(&std::fs::read(path)?)
}

impl Checkpoint {
    /// Copies saved values into a freshly built store. Every group the
    /// model expects must be present with its exact shape.
    pub fn restore_into(&self, store: &mut ParamStore) -> Result<(), CheckpointError> {
        for expected in store.groups().map(|g| (g.name.clone(), g.shape.clone())).collect::<Vec<_>>() {
            let (name, shape) = expected;
            let found = self
                .groups
                .iter()
                .find(|(n, _, _)| *n == name)
                .ok_or_else(|| CheckpointError::MissingGroup(name.clone()))?;
            if found.1 != shape {
                return Err(CheckpointError::GroupShapeMismatch {
                    name,
                    found: found.1.clone(),
                    expected: shape,
                });
            }
            let id = store.find(&found.0).unwrap();
            store.get_mut(id).data.copy_from_slice(&found.2);
        }
        Ok(())
    }
}
