//! `model.json` manifest plus `model.bin` blob of little-endian `f64` values.
//!
//! The blob holds every parameter, then every batch-norm running statistic,
//! concatenated in manifest order with no padding.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{Model, ModelSpec};
use crate::nn::RunningStats;
use crate::params::{ParamKind, ParameterSet};
use crate::tensor::Tensor;

pub const FORMAT: &str = "dfreg-checkpoint";
pub const VERSION: u32 = 1;
pub const DTYPE: &str = "f64le";
pub const MANIFEST_FILE: &str = "model.json";
pub const BLOB_FILE: &str = "model.bin";

const RUNNING_MEAN: &str = "bn_running_mean";
const RUNNING_VAR: &str = "bn_running_var";

/// Training metadata stored alongside the parameters.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub step: u64,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    /// A parameter kind, or `bn_running_mean` / `bn_running_var` for buffers.
    pub kind: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub nbytes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub dtype: String,
    pub step: u64,
    pub config_hash: String,
    pub model: ModelSpec,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub manifest: Manifest,
    pub blob: Vec<u8>,
}

/// Lowercase hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn push_tensor(tensors: &mut Vec<TensorEntry>, blob: &mut Vec<u8>, name: String, kind: &str, shape: Vec<usize>, data: &[f64]) {
    tensors.push(TensorEntry {
        name,
        kind: kind.to_string(),
        shape,
        offset: blob.len(),
        nbytes: data.len() * 8,
    });
    for v in data {
        blob.extend_from_slice(&v.to_le_bytes());
    }
}

/// Serializes `model` and `meta`.
pub fn save_checkpoint(model: &Model, meta: &CheckpointMeta) -> Checkpoint {
    let mut tensors = Vec::new();
    let mut blob = Vec::with_capacity(model.params.numel() * 8);
    for p in model.params.iter() {
        push_tensor(&mut tensors, &mut blob, p.name.clone(), p.kind.as_str(), p.value.shape().to_vec(), p.value.data());
    }
    for (i, s) in model.bn_stats.iter().enumerate() {
        let l = i + 1;
        push_tensor(&mut tensors, &mut blob, format!("bn{l}.running_mean"), RUNNING_MEAN, vec![s.mean.len()], &s.mean);
        push_tensor(&mut tensors, &mut blob, format!("bn{l}.running_var"), RUNNING_VAR, vec![s.var.len()], &s.var);
    }
    Checkpoint {
        manifest: Manifest {
            format: FORMAT.into(),
            version: VERSION,
            dtype: DTYPE.into(),
            step: meta.step,
            config_hash: meta.config_hash.clone(),
            model: model.spec.clone(),
            tensors,
        },
        blob,
    }
}

/// Validates a manifest against its blob and rebuilds the model.
pub fn load_checkpoint(manifest: &Manifest, blob: &[u8]) -> Result<(Model, CheckpointMeta)> {
    let err = |m: String| Error::Checkpoint(m);
    if manifest.format != FORMAT {
        return Err(err(format!("unknown format tag {:?}", manifest.format)));
    }
    if manifest.version != VERSION {
        return Err(err(format!("unsupported version {}", manifest.version)));
    }
    if manifest.dtype != DTYPE {
        return Err(err(format!("unknown dtype tag {:?}; expected {DTYPE}", manifest.dtype)));
    }
    let mut expected_offset = 0usize;
    for t in &manifest.tensors {
        let numel: usize = t.shape.iter().product();
        if t.nbytes != numel * 8 {
            return Err(err(format!("{}: nbytes {} does not match shape {:?}", t.name, t.nbytes, t.shape)));
        }
        if t.offset < expected_offset {
            return Err(err(format!("{}: offset {} overlaps previous tensor ending at {expected_offset}", t.name, t.offset)));
        }
        if t.offset > expected_offset {
            return Err(err(format!("{}: gap before offset {} (expected {expected_offset})", t.name, t.offset)));
        }
        expected_offset += t.nbytes;
    }
    if blob.len() != expected_offset {
        return Err(err(format!(
            "blob length mismatch: manifest declares {expected_offset} bytes, blob has {}",
            blob.len()
        )));
    }

    let read = |t: &TensorEntry| -> Vec<f64> {
        blob[t.offset..t.offset + t.nbytes]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect()
    };
    let mut params = ParameterSet::new();
    let mut means = Vec::new();
    let mut vars = Vec::new();
    for t in &manifest.tensors {
        match t.kind.as_str() {
            RUNNING_MEAN => means.push(read(t)),
            RUNNING_VAR => vars.push(read(t)),
            k => {
                let kind = ParamKind::parse(k).ok_or_else(|| err(format!("{}: unknown kind {k:?}", t.name)))?;
                params.push(t.name.clone(), kind, Tensor::new(t.shape.clone(), read(t))?)?;
            }
        }
    }
    if means.len() != vars.len() {
        return Err(err("running mean and variance buffers are unpaired".into()));
    }
    let stats = means.into_iter().zip(vars).map(|(mean, var)| RunningStats { mean, var }).collect();
    let model = Model::from_parts(manifest.model.clone(), params, Some(stats))
        .map_err(|e| err(format!("manifest does not describe a valid model: {e}")))?;
    Ok((
        model,
        CheckpointMeta {
            step: manifest.step,
            config_hash: manifest.config_hash.clone(),
        },
    ))
}

impl Checkpoint {
    pub fn manifest_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn from_parts(manifest_json: &str, blob: Vec<u8>) -> Result<Self> {
        let manifest: Manifest =
            serde_json::from_str(manifest_json).map_err(|e| Error::Checkpoint(format!("bad manifest: {e}")))?;
        Ok(Self { manifest, blob })
    }

    pub fn load(&self) -> Result<(Model, CheckpointMeta)> {
        load_checkpoint(&self.manifest, &self.blob)
    }

    /// SHA-256 over the manifest text followed by the blob.
    pub fn digest(&self) -> String {
        let mut bytes = self.manifest_json().into_bytes();
        bytes.extend_from_slice(&self.blob);
        sha256_hex(&bytes)
    }

    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(MANIFEST_FILE), self.manifest_json())?;
        fs::write(dir.join(BLOB_FILE), &self.blob)?;
        Ok(())
    }

    /// Reads `model.json` and `model.bin` from `dir`, or from the directory
    /// containing `path` when a manifest file is given directly.
    pub fn read_dir(path: &Path) -> Result<Self> {
        let dir = if path.is_file() { path.parent().unwrap_or(Path::new(".")) } else { path };
        let read = |name: &str| {
            fs::read(dir.join(name)).map_err(|e| Error::Checkpoint(format!("{}: {e}", dir.join(name).display())))
        };
        let manifest = String::from_utf8(read(MANIFEST_FILE)?)
            .map_err(|_| Error::Checkpoint("manifest is not UTF-8".into()))?;
        Self::from_parts(&manifest, read(BLOB_FILE)?)
    }
}
