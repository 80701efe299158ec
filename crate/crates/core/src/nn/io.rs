//! Parameter directories: `manifest.json` (metadata, names, shapes) plus
//! `params.bin` holding every tensor as little-endian f64 in manifest order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ParamStore;
use crate::encoders::files::{f64_from_le, f64_to_le, read_artifact};
use crate::error::{Error, Result};

pub const PARAMS: &str = "params.bin";
pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamManifest {
    pub meta: serde_json::Value,
    pub dtype: String,
    pub tensors: Vec<TensorEntry>,
}

pub fn write_params(dir: &Path, ps: &ParamStore, meta: serde_json::Value) -> Result<()> {
    fs::create_dir_all(dir)?;
    let tensors = ps.ids().map(|id| TensorEntry { name: ps.name(id).into(), shape: ps.shape(id).to_vec() }).collect();
    let manifest = ParamManifest { meta, dtype: "f64-le".into(), tensors };
    let mut bytes = Vec::with_capacity(ps.count() * 8);
    for id in ps.ids() {
        bytes.extend(f64_to_le(ps.get(id)));
    }
    fs::write(dir.join(PARAMS), bytes)?;
    fs::write(dir.join(MANIFEST), serde_json::to_vec_pretty(&manifest)?)?;
    Ok(())
}

pub fn read_params(dir: &Path) -> Result<(ParamStore, serde_json::Value)> {
    let manifest: ParamManifest = serde_json::from_slice(&read_artifact(&dir.join(MANIFEST))?)?;
    if manifest.dtype != "f64-le" {
        return Err(Error::Format(format!("unsupported dtype {}", manifest.dtype)));
    }
    let values = f64_from_le(&read_artifact(&dir.join(PARAMS))?)?;
    let mut ps = ParamStore::new();
    let mut offset = 0;
    for t in &manifest.tensors {
        let n: usize = t.shape.iter().product();
        let slice = values
            .get(offset..offset + n)
            .ok_or_else(|| Error::Format(format!("params.bin too short for tensor {}", t.name)))?;
        ps.add(t.name.clone(), &t.shape, slice.to_vec());
        offset += n;
    }
    if offset != values.len() {
        return Err(Error::Format(format!("params.bin has {} trailing values", values.len() - offset)));
    }
    Ok((ps, manifest.meta))
}

/// Copy values from `loaded` into `target`, requiring identical names and shapes.
pub fn load_into(target: &mut ParamStore, loaded: &ParamStore) -> Result<()> {
    target.copy_from(loaded)
}
