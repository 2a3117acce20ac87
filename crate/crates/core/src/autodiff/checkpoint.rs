//! Checkpoint directories: `manifest.json` plus one little-endian value blob.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::array::Array;
use super::params::ParamStore;
use crate::error::{Error, Result};

pub const MANIFEST: &str = "manifest.json";
pub const BLOB: &str = "values.bin";

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    /// Byte offset into the blob.
    pub offset: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
    /// Model hyperparameters needed to rebuild the parameter layout.
    #[serde(default)]
    pub meta: serde_json::Value,
}

pub fn save(store: &ParamStore, meta: serde_json::Value, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut blob = Vec::with_capacity(store.num_values() * 8);
    let mut entries = Vec::with_capacity(store.len());
    for e in store.entries() {
        entries.push(ManifestEntry {
            name: e.name.clone(),
            shape: e.value.shape().to_vec(),
            dtype: "f64".into(),
            offset: blob.len() as u64,
        });
        for v in e.value.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    let manifest = Manifest { entries, meta };
    let mpath = dir.join(MANIFEST);
    fs::write(&mpath, serde_json::to_vec_pretty(&manifest)?).map_err(|e| Error::io(&mpath, e))?;
    let bpath = dir.join(BLOB);
    fs::write(&bpath, blob).map_err(|e| Error::io(&bpath, e))?;
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let mpath = dir.join(MANIFEST);
    let text = fs::read(&mpath).map_err(|e| Error::io(&mpath, e))?;
    Ok(serde_json::from_slice(&text)?)
}

/// Fills `store` from `dir`. Every store entry must be present with the same shape.
pub fn load_into(store: &mut ParamStore, dir: &Path) -> Result<Manifest> {
    let manifest = read_manifest(dir)?;
    let bpath = dir.join(BLOB);
    let blob = fs::read(&bpath).map_err(|e| Error::io(&bpath, e))?;
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let name = store.entry(id).name.clone();
        let entry = manifest
            .entries
            .iter()
            .find(|m| m.name == name)
            .ok_or_else(|| Error::domain(format!("checkpoint lacks parameter {name}")))?;
        if entry.dtype != "f64" {
            return Err(Error::domain(format!("{name}: unsupported dtype {}", entry.dtype)));
        }
        let expected = store.value(id).shape().to_vec();
        if entry.shape != expected {
            return Err(Error::Shape {
                op: "checkpoint load",
                left: expected,
                right: entry.shape.clone(),
            });
        }
        let n: usize = entry.shape.iter().product();
        let start = entry.offset as usize;
        let end = start + n * 8;
        if end > blob.len() {
            return Err(Error::domain(format!("{name}: blob truncated")));
        }
        let data = blob[start..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        *store.value_mut(id) = Array::new(entry.shape.clone(), data)?;
    }
    Ok(manifest)
}
