//! `TCKPT1` checkpoint container.
//!
//! ```text
//! "TCKPT1"                magic, 6 bytes
//! u64 LE                  manifest length in bytes
//! manifest                UTF-8 JSON (see [`Manifest`])
//! payload                 raw little-endian tensor data, in manifest order
//! ```
//!
//! Tensor offsets are relative to the start of the payload. Values are
//! written with their exact bit patterns, so a reload is bit-exact.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::BlockConfig;
use super::forward::Model;
use super::params::ModelParams;
use crate::error::{Error, Result};
use crate::numerics::{Precision, Real, Tensor};

pub const MAGIC: &[u8; 6] = b"TCKPT1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub precision: Precision,
    pub offset: u64,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    /// Optimizer steps taken when the checkpoint was written.
    pub step: usize,
    pub block: BlockConfig,
    /// Free-form run configuration echo (the `key = value` text of the run).
    pub run_config: String,
    pub tensors: Vec<TensorEntry>,
}

/// Serializes `model` into checkpoint bytes.
pub fn encode<T: Real>(model: &Model<T>, step: usize, run_config: &str) -> Result<Vec<u8>> {
    let mut payload = Vec::new();
    let mut tensors = Vec::new();
    for (name, t) in model.params.named() {
        let offset = payload.len() as u64;
        for &v in t.data() {
            v.write_le(&mut payload);
        }
        tensors.push(TensorEntry {
            name,
            shape: t.shape().to_vec(),
            precision: T::PRECISION,
            offset,
            bytes: payload.len() as u64 - offset,
        });
    }
    let manifest = Manifest {
        version: FORMAT_VERSION,
        step,
        block: model.config().clone(),
        run_config: run_config.to_string(),
        tensors,
    };
    let json = serde_json::to_vec(&manifest)?;
    let mut out = Vec::with_capacity(MAGIC.len() + 8 + json.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&payload);
    Ok(out)
}

/// Parses checkpoint bytes. The stored precision must equal `T`'s.
pub fn decode<T: Real>(bytes: &[u8]) -> Result<(Model<T>, Manifest)> {
    let bad = |m: &str| Error::Checkpoint(m.to_string());
    if bytes.len() < MAGIC.len() + 8 || &bytes[..MAGIC.len()] != MAGIC {
        return Err(bad("missing TCKPT1 magic"));
    }
    let len_bytes: [u8; 8] = bytes[6..14].try_into().expect("8 bytes");
    let len = u64::from_le_bytes(len_bytes) as usize;
    let body = &bytes[14..];
    if body.len() < len {
        return Err(bad("truncated manifest"));
    }
    let manifest: Manifest = serde_json::from_slice(&body[..len])?;
    if manifest.version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {}", manifest.version)));
    }
    let payload = &body[len..];
    let mut params = ModelParams::<T>::init(&manifest.block, 0)?;
    let named: Vec<(String, Vec<usize>)> =
        params.named().into_iter().map(|(n, t)| (n, t.shape().to_vec())).collect();
    if named.len() != manifest.tensors.len() {
        return Err(bad("tensor count does not match the configuration"));
    }
    for ((slot, (name, shape)), entry) in params.tensors_mut().into_iter().zip(named).zip(&manifest.tensors) {
        if entry.name != name || entry.shape != shape {
            return Err(Error::Checkpoint(format!("unexpected tensor {} {:?}", entry.name, entry.shape)));
        }
        if entry.precision != T::PRECISION {
            return Err(Error::Checkpoint(format!(
                "{} stored as {}, requested {}",
                entry.name,
                entry.precision.name(),
                T::PRECISION.name()
            )));
        }
        let width = T::PRECISION.byte_width();
        let count = slot.len();
        let (start, end) = (entry.offset as usize, entry.offset as usize + count * width);
        if entry.bytes as usize != count * width || end > payload.len() {
            return Err(Error::Checkpoint(format!("{}: payload out of range", entry.name)));
        }
        let data = payload[start..end].chunks_exact(width).map(T::read_le).collect();
        *slot = Tensor::from_vec(&shape, data)?;
    }
    let model = Model::from_params(manifest.block.clone(), params)?;
    Ok((model, manifest))
}

pub fn save<T: Real>(path: &Path, model: &Model<T>, step: usize, run_config: &str) -> Result<()> {
    fs::write(path, encode(model, step, run_config)?)?;
    Ok(())
}

pub fn load<T: Real>(path: &Path) -> Result<(Model<T>, Manifest)> {
    decode(&fs::read(path)?)
}

/// Reads only the manifest, e.g. to pick the precision before loading.
pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let bytes = fs::read(path)?;
    if bytes.len() < 14 || &bytes[..6] != MAGIC {
        return Err(Error::Checkpoint("missing TCKPT1 magic".into()));
    }
    let len = u64::from_le_bytes(bytes[6..14].try_into().expect("8 bytes")) as usize;
    let end = 14usize.checked_add(len).filter(|&e| e <= bytes.len());
    let end = end.ok_or_else(|| Error::Checkpoint("truncated manifest".into()))?;
    Ok(serde_json::from_slice(&bytes[14..end])?)
}
