//! On-disk checkpoints: `manifest.json` plus one raw little-endian blob per
//! tensor under `tensors/`.

use std::fs;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::params::ParameterSet;
use super::spec::ModelSpec;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_VERSION: u32 = 1;
const MANIFEST: &str = "manifest.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    fn width(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct TensorEntry {
    group: String,
    name: String,
    shape: Vec<usize>,
    dtype: Dtype,
    file: String,
    crc32: u32,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    spec: ModelSpec,
    step: u64,
    meta: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

/// Model weights plus any auxiliary tensor groups (optimizer moments,
/// projection heads) and free-form metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub spec: ModelSpec,
    pub params: ParameterSet,
    pub aux: IndexMap<String, ParameterSet>,
    pub step: u64,
    pub meta: serde_json::Value,
}

impl Checkpoint {
    pub fn new(spec: ModelSpec, params: ParameterSet) -> Self {
        Self {
            spec,
            params,
            aux: IndexMap::new(),
            step: 0,
            meta: serde_json::Value::Null,
        }
    }
}

const PARAMS_GROUP: &str = "params";

fn file_name(group: &str, index: usize, name: &str) -> String {
    let clean: String = name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '_' { c } else { '_' })
        .collect();
    format!("{group}.{index:04}.{clean}.bin")
}

/// Write `ckpt` into directory `dir`, replacing an existing manifest.
pub fn save_checkpoint(dir: &Path, ckpt: &Checkpoint) -> Result<()> {
    let tensor_dir = dir.join("tensors");
    fs::create_dir_all(&tensor_dir).map_err(|e| Error::io(&tensor_dir, e))?;
    let mut entries = Vec::new();
    let groups = std::iter::once((PARAMS_GROUP, &ckpt.params))
        .chain(ckpt.aux.iter().map(|(k, v)| (k.as_str(), v)));
    for (group, set) in groups {
        for (i, (name, t)) in set.iter().enumerate() {
            let file = file_name(group, i, name);
            let mut bytes = Vec::with_capacity(t.numel() * 8);
            for v in t.data() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
            let path = tensor_dir.join(&file);
            fs::write(&path, &bytes).map_err(|e| Error::io(&path, e))?;
            entries.push(TensorEntry {
                group: group.to_string(),
                name: name.clone(),
                shape: t.shape().to_vec(),
                dtype: Dtype::F64,
                file,
                crc32: crc32fast::hash(&bytes),
            });
        }
    }
    let manifest = Manifest {
        format_version: CHECKPOINT_VERSION,
        spec: ckpt.spec.clone(),
        step: ckpt.step,
        meta: ckpt.meta.clone(),
        tensors: entries,
    };
    let path = dir.join(MANIFEST);
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Format(e.to_string()))?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let path = dir.join(MANIFEST);
    if !path.exists() {
        return Err(Error::Missing(path));
    }
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    if manifest.format_version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {}",
            manifest.format_version
        )));
    }
    let mut params = ParameterSet::new();
    let mut aux: IndexMap<String, ParameterSet> = IndexMap::new();
    for entry in &manifest.tensors {
        let blob = dir.join("tensors").join(&entry.file);
        let bytes = fs::read(&blob).map_err(|e| Error::io(&blob, e))?;
        let found = crc32fast::hash(&bytes);
        if found != entry.crc32 {
            return Err(Error::Checksum {
                blob: entry.file.clone(),
                expected: entry.crc32,
                found,
            });
        }
        let numel: usize = entry.shape.iter().product();
        if bytes.len() != numel * entry.dtype.width() {
            return Err(Error::Checkpoint(format!(
                "{} holds {} bytes, shape {:?} needs {}",
                entry.file,
                bytes.len(),
                entry.shape,
                numel * entry.dtype.width()
            )));
        }
        let data: Vec<f64> = match entry.dtype {
            Dtype::F64 => bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect(),
            Dtype::F32 => bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")) as f64)
                .collect(),
        };
        let t = Tensor::from_vec(&entry.shape, data)?;
        if entry.group == PARAMS_GROUP {
            params.insert(entry.name.clone(), t);
        } else {
            aux.entry(entry.group.clone()).or_default().insert(entry.name.clone(), t);
        }
    }
    manifest.spec.validate()?;
    Ok(Checkpoint {
        spec: manifest.spec,
        params,
        aux,
        step: manifest.step,
        meta: manifest.meta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{ModelKind, Network};

    #[test]
    fn round_trip_is_bit_exact() {
        let spec = ModelSpec::default_for(ModelKind::Resnet, 2, 1, 1, 8, 8);
        let net = Network::new(spec.clone(), 3).unwrap();
        let mut ckpt = Checkpoint::new(spec, net.params().clone());
        let mut m = net.params().zeros_like();
        m.iter_mut().for_each(|(_, t)| t.data_mut().iter_mut().for_each(|v| *v = 1.0 / 3.0));
        ckpt.aux.insert("adam.m".into(), m);
        ckpt.step = 17;
        ckpt.meta = serde_json::json!({"epoch": 4});
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(dir.path(), &ckpt).unwrap();
        let back = load_checkpoint(dir.path()).unwrap();
        assert_eq!(back, ckpt);
        assert!(Network::from_parts(back.spec, back.params).is_ok());
    }

    #[test]
    fn corrupted_blob_is_reported() {
        let spec = ModelSpec::default_for(ModelKind::Resnet, 1, 1, 1, 8, 8);
        let net = Network::new(spec.clone(), 0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(dir.path(), &Checkpoint::new(spec, net.params().clone())).unwrap();
        let blob = fs::read_dir(dir.path().join("tensors")).unwrap().next().unwrap().unwrap().path();
        let mut bytes = fs::read(&blob).unwrap();
        bytes[0] ^= 0xff;
        fs::write(&blob, bytes).unwrap();
        assert!(matches!(load_checkpoint(dir.path()), Err(Error::Checksum { .. })));
    }

    #[test]
    fn missing_manifest_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_checkpoint(dir.path()), Err(Error::Missing(_))));
    }
}
