//! On-disk checkpoints: a directory holding `params.bin` (little-endian f32
//! tensors back to back) and `manifest.json`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Mat, Model, ModelConfig, NetworkError};

pub const FORMAT: &str = "rpdiff-checkpoint";
pub const FORMAT_VERSION: u32 = 1;
pub const PARAMS_FILE: &str = "params.bin";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad manifest: {0}")]
    Manifest(#[from] serde_json::Error),
    #[error("unsupported checkpoint format {0} v{1}")]
    Format(String, u32),
    #[error("checkpoint is corrupt: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Network(#[from] NetworkError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: [usize; 2],
    /// Offset into `params.bin`, in elements.
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub dtype: String,
    pub config: ModelConfig,
    pub config_hash: String,
    pub params_sha256: String,
    pub tensors: Vec<TensorEntry>,
    /// Free-form training metadata.
    #[serde(default)]
    pub info: serde_json::Value,
}

/// SHA-256 of the canonical JSON encoding of a serialisable value.
pub fn json_hash<S: Serialize>(value: &S) -> String {
    let bytes = serde_json::to_vec(value).expect("config serialises");
    hex::encode(Sha256::digest(&bytes))
}

pub fn save(dir: &Path, model: &Model<f32>, info: serde_json::Value) -> Result<Manifest, CheckpointError> {
    fs::create_dir_all(dir)?;
    let mut bytes = Vec::with_capacity(model.param_count() * 4);
    let mut tensors = Vec::new();
    let mut offset = 0;
    for (name, p) in model.names().iter().zip(model.params()) {
        tensors.push(TensorEntry {
            name: name.clone(),
            shape: [p.nrows(), p.ncols()],
            offset,
        });
        offset += p.len();
        for v in p.iter() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    let manifest = Manifest {
        format: FORMAT.into(),
        version: FORMAT_VERSION,
        dtype: "f32".into(),
        config: model.config().clone(),
        config_hash: json_hash(model.config()),
        params_sha256: hex::encode(Sha256::digest(&bytes)),
        tensors,
        info,
    };
    fs::write(dir.join(PARAMS_FILE), &bytes)?;
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest, CheckpointError> {
    let m: Manifest = serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST_FILE))?)?;
    if m.format != FORMAT || m.version != FORMAT_VERSION || m.dtype != "f32" {
        return Err(CheckpointError::Format(m.format, m.version));
    }
    Ok(m)
}

pub fn load(dir: &Path) -> Result<(Model<f32>, Manifest), CheckpointError> {
    let manifest = read_manifest(dir)?;
    let bytes = fs::read(dir.join(PARAMS_FILE))?;
    if hex::encode(Sha256::digest(&bytes)) != manifest.params_sha256 {
        return Err(CheckpointError::Corrupt("parameter checksum mismatch".into()));
    }
    let mut model = Model::<f32>::new(&manifest.config)?;
    if manifest.tensors.len() != model.params().len() {
        return Err(CheckpointError::Corrupt("tensor count does not match the config".into()));
    }
    let mut params = Vec::with_capacity(manifest.tensors.len());
    for (entry, (name, expect)) in manifest.tensors.iter().zip(model.names().iter().zip(model.params())) {
        if &entry.name != name || entry.shape != [expect.nrows(), expect.ncols()] {
            return Err(CheckpointError::Corrupt(format!("unexpected tensor {}", entry.name)));
        }
        let len = entry.shape[0] * entry.shape[1];
        let span = bytes
            .get(entry.offset * 4..(entry.offset + len) * 4)
            .ok_or_else(|| CheckpointError::Corrupt("params.bin is truncated".into()))?;
        let vals: Vec<f32> = span
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        params.push(Mat::from_shape_vec((entry.shape[0], entry.shape[1]), vals).expect("shape checked"));
    }
    model.set_params(params)?;
    Ok((model, manifest))
}
