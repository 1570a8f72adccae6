//! Checkpoint directories: `manifest.json` describing every named tensor and
//! `params.bin` holding their little-endian f64 values in manifest order.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ParamStore, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    /// Byte offset into the values file.
    pub offset: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Manifest {
    params: Vec<ManifestEntry>,
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    meta: serde_json::Value,
}

/// Named tensors plus free-form metadata (model config, partition, ...).
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub tensors: Vec<(String, Tensor)>,
    pub meta: serde_json::Value,
}

impl Checkpoint {
    pub fn from_store(store: &ParamStore, meta: serde_json::Value) -> Self {
        let tensors = store
            .ids()
            .map(|id| {
                let t = store.tensor(id);
                let plain = Tensor::new(t.shape().to_vec(), t.data().to_vec()).expect("shape");
                (store.name(id).to_string(), plain)
            })
            .collect();
        Checkpoint { tensors, meta }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.iter().map(|(n, _)| n.as_str())
    }
}

pub fn save_checkpoint(dir: &Path, ckpt: &Checkpoint) -> Result<()> {
    save_tensors(dir, "params.bin", ckpt)
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    load_tensors(dir, "params.bin")
}

pub(crate) fn save_tensors(dir: &Path, bin_name: &str, ckpt: &Checkpoint) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(ckpt.tensors.len());
    let mut bytes = Vec::new();
    for (name, t) in &ckpt.tensors {
        entries.push(ManifestEntry {
            name: name.clone(),
            shape: t.shape().to_vec(),
            dtype: "f64".into(),
            offset: bytes.len() as u64,
        });
        for v in t.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    let manifest = Manifest { params: entries, meta: ckpt.meta.clone() };
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
    let mut f = fs::File::create(dir.join(bin_name))?;
    f.write_all(&bytes)?;
    Ok(())
}

pub(crate) fn load_tensors(dir: &Path, bin_name: &str) -> Result<Checkpoint> {
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
    let bytes = fs::read(dir.join(bin_name))?;
    let mut tensors = Vec::with_capacity(manifest.params.len());
    for e in manifest.params {
        if e.dtype != "f64" {
            return Err(Error::Checkpoint(format!("{}: unsupported dtype {}", e.name, e.dtype)));
        }
        let n: usize = e.shape.iter().product();
        let start = e.offset as usize;
        let end = start + 8 * n;
        if end > bytes.len() {
            return Err(Error::Checkpoint(format!("{}: values file truncated", e.name)));
        }
        let data = bytes[start..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        tensors.push((e.name, Tensor::new(e.shape, data)?));
    }
    Ok(Checkpoint { tensors, meta: manifest.meta })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Init, RngStream};

    #[test]
    fn round_trip_is_bit_exact() {
        let mut store = ParamStore::new();
        store.declare("a.weight", &[3, 4], Init::WEIGHT).unwrap();
        store.declare("a.bias", &[4], Init::Zeros).unwrap();
        store.materialize(&RngStream::new(11));
        store.tensor_mut(crate::tensor::ParamId(1)).data_mut()[2] = f64::MIN_POSITIVE / 3.0;
        let dir = tempfile::tempdir().unwrap();
        let ck = Checkpoint::from_store(&store, serde_json::json!({"kind": "test"}));
        save_checkpoint(dir.path(), &ck).unwrap();
        let back = load_checkpoint(dir.path()).unwrap();
        assert_eq!(back, ck);
        let first = fs::read(dir.path().join("params.bin")).unwrap();
        save_checkpoint(dir.path(), &back).unwrap();
        assert_eq!(first, fs::read(dir.path().join("params.bin")).unwrap());
    }
}
