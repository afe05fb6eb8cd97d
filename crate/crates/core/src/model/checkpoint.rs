//! Checkpoints: a JSON manifest plus one little-endian f64 blob holding every
//! parameter tensor back to back, in manifest order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{PyFormerConfig, PyFormerParams};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &str = "PYFORMER-CKPT1";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const BLOB_FILE: &str = "params.bin";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset into the blob, in f64 elements.
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub magic: String,
    pub config: PyFormerConfig,
    pub dtype: String,
    pub data_file: String,
    pub tensors: Vec<TensorEntry>,
}

pub fn save_checkpoint(dir: &Path, cfg: &PyFormerConfig, params: &PyFormerParams) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::new();
    let mut blob = Vec::with_capacity(params.count() * 8);
    let mut offset = 0;
    for (name, t) in params.named() {
        entries.push(TensorEntry { name, shape: t.dims().to_vec(), offset });
        offset += t.numel();
        for v in t.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    let manifest = Manifest {
        magic: CHECKPOINT_MAGIC.to_string(),
        config: cfg.clone(),
        dtype: "f64le".to_string(),
        data_file: BLOB_FILE.to_string(),
        tensors: entries,
    };
    let blob_path = dir.join(BLOB_FILE);
    fs::write(&blob_path, blob).map_err(|e| Error::io(&blob_path, e))?;
    let manifest_path = dir.join(MANIFEST_FILE);
    let mut text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::json(&manifest_path, e))?;
    text.push('\n');
    fs::write(&manifest_path, text).map_err(|e| Error::io(&manifest_path, e))
}

pub fn load_checkpoint(dir: &Path) -> Result<(PyFormerConfig, PyFormerParams)> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::json(&manifest_path, e))?;
    if manifest.magic != CHECKPOINT_MAGIC || manifest.dtype != "f64le" {
        return Err(Error::format(&manifest_path, "not a PyFormer f64 checkpoint"));
    }
    let cfg = manifest.config;
    cfg.validate().map_err(|e| Error::format(&manifest_path, e.to_string()))?;

    let blob_path = dir.join(&manifest.data_file);
    let raw = fs::read(&blob_path).map_err(|e| Error::io(&blob_path, e))?;
    if raw.len() % 8 != 0 {
        return Err(Error::format(&blob_path, format!("{} bytes is not a whole number of f64s", raw.len())));
    }
    let values: Vec<f64> = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();

    let template = PyFormerParams::init(&cfg, 0)?;
    let names = template.named();
    if names.len() != manifest.tensors.len() {
        return Err(Error::format(
            &manifest_path,
            format!("{} tensors listed, config implies {}", manifest.tensors.len(), names.len()),
        ));
    }
    let mut loaded = Vec::with_capacity(names.len());
    let mut expect_offset = 0;
    for ((name, t), entry) in names.iter().zip(&manifest.tensors) {
        if &entry.name != name || entry.shape != t.dims() || entry.offset != expect_offset {
            return Err(Error::format(
                &manifest_path,
                format!("entry {} {:?} does not match expected {name} {}", entry.name, entry.shape, t.shape()),
            ));
        }
        let end = entry.offset + t.numel();
        if end > values.len() {
            return Err(Error::format(&blob_path, format!("blob too short for {name}")));
        }
        loaded.push(Tensor::new(entry.shape.clone(), values[entry.offset..end].to_vec())?);
        expect_offset = end;
    }
    if expect_offset != values.len() {
        return Err(Error::format(&blob_path, format!("{} trailing values", values.len() - expect_offset)));
    }
    let mut it = loaded.into_iter();
    let params = template.map(|_| it.next().expect("one tensor per entry"));
    Ok((cfg, params))
}
