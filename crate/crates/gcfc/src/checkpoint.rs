//! Binary checkpoints.
//!
//! Layout: the magic `GCFC1`, the manifest length as a little-endian
//! `u64`, the JSON manifest, then every tensor as little-endian `f64`s in
//! manifest order. Tensor offsets count `f64`s from the start of the data.

use std::fs;
use std::path::Path;

use gcfc_core::autodiff::ParamStore;
use gcfc_core::paircc::{GraphCfc, ModelConfig, ModelShape};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 5] = b"GCFC1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: [usize; 2],
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub config: ModelConfig,
    pub shape: ModelShape,
    pub labels: Vec<String>,
    pub tensors: Vec<TensorEntry>,
}

/// A restored model with its label names.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: GraphCfc,
    pub params: ParamStore,
    pub labels: Vec<String>,
}

pub fn encode(model: &GraphCfc, params: &ParamStore, labels: &[String]) -> Result<Vec<u8>> {
    if labels.len() != model.shape.classes {
        return Err(Error::Config(format!(
            "{} label names for a {}-class model",
            labels.len(),
            model.shape.classes
        )));
    }
    let mut tensors = Vec::with_capacity(params.len());
    let mut offset = 0;
    for (_, p) in params.iter() {
        let s = p.value.shape();
        tensors.push(TensorEntry {
            name: p.name.clone(),
            shape: [s.rows, s.cols],
            offset,
        });
        offset += s.rows * s.cols;
    }
    let manifest = Manifest {
        config: model.config.clone(),
        shape: model.shape,
        labels: labels.to_vec(),
        tensors,
    };
    let json = serde_json::to_vec(&manifest).map_err(|e| Error::Config(e.to_string()))?;
    let mut out = Vec::with_capacity(MAGIC.len() + 8 + json.len() + offset * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, p) in params.iter() {
        for v in p.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

/// Rebuild the model described by the manifest and fill its parameters,
/// checking every name and shape against the rebuilt model.
pub fn decode(bytes: &[u8], path: &Path) -> Result<Checkpoint> {
    let bad = |msg: String| Error::parse(path, 0, msg);
    if bytes.len() < MAGIC.len() + 8 || &bytes[..MAGIC.len()] != MAGIC {
        return Err(bad("not a GCFC1 checkpoint".into()));
    }
    let mut len = [0u8; 8];
    len.copy_from_slice(&bytes[MAGIC.len()..MAGIC.len() + 8]);
    let len = u64::from_le_bytes(len) as usize;
    let start = MAGIC.len() + 8;
    let json = bytes
        .get(start..start.saturating_add(len))
        .ok_or_else(|| bad(format!("manifest of {len} bytes is truncated")))?;
    let manifest: Manifest = serde_json::from_slice(json).map_err(|e| bad(format!("manifest: {e}")))?;
    let data = &bytes[start + len..];
    if !data.len().is_multiple_of(8) {
        return Err(bad(format!(
            "tensor data of {} bytes is not a whole number of f64",
            data.len()
        )));
    }
    let (model, mut params) = GraphCfc::build(&manifest.config, manifest.shape, 0)?;
    if manifest.labels.len() != manifest.shape.classes {
        return Err(bad(format!(
            "{} label names for {} classes",
            manifest.labels.len(),
            manifest.shape.classes
        )));
    }
    if manifest.tensors.len() != params.len() {
        return Err(bad(format!(
            "checkpoint has {} tensors, the model has {}",
            manifest.tensors.len(),
            params.len()
        )));
    }
    let floats = data.len() / 8;
    for entry in &manifest.tensors {
        let id = params
            .id(&entry.name)
            .ok_or_else(|| bad(format!("tensor '{}' does not belong to the model", entry.name)))?;
        let want = params.value(id).shape();
        if [want.rows, want.cols] != entry.shape {
            return Err(bad(format!(
                "tensor '{}' has shape {:?}, the model expects [{}, {}]",
                entry.name, entry.shape, want.rows, want.cols
            )));
        }
        let n = want.rows * want.cols;
        if entry.offset.checked_add(n).is_none_or(|end| end > floats) {
            return Err(bad(format!("tensor '{}' runs past the end of the data", entry.name)));
        }
        let target = params.value_mut(id).data_mut();
        for (k, slot) in target.iter_mut().enumerate() {
            let at = (entry.offset + k) * 8;
            let mut b = [0u8; 8];
            b.copy_from_slice(&data[at..at + 8]);
            *slot = f64::from_le_bytes(b);
        }
    }
    Ok(Checkpoint {
        model,
        params,
        labels: manifest.labels,
    })
}

pub fn save(path: &Path, model: &GraphCfc, params: &ParamStore, labels: &[String]) -> Result<()> {
    let bytes = encode(model, params, labels)?;
    fs::write(path, bytes).map_err(|e| Error::write(path, e))
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::read(path, e))?;
    decode(&bytes, path)
}
