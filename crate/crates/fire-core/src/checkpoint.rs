//! Versioned JSON checkpoints: model config plus every named tensor.
//!
//! serde_json serializes f64 with the shortest representation that parses
//! back to the identical bit pattern, so a save/load roundtrip is bit-exact
//! for the finite values parameters are required to be.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::model::{init_params, ModelConfig, ModelParams, ParamMut, ParamRef};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug)]
pub enum CheckpointError {
    Io(std::io::Error),
    Json(serde_json::Error),
    UnsupportedVersion(u32),
    MissingTensor(String),
    UnknownTensor(String),
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    NonFinite(String),
    InvalidConfig(String),
}

impl fmt::Display for CheckpointError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CheckpointError::Io(e) => write!(f, "io error: {e}"),
            CheckpointError::Json(e) => write!(f, "json error: {e}"),
            CheckpointError::UnsupportedVersion(v) => {
                write!(f, "unsupported checkpoint format version {v}")
            }
            CheckpointError::MissingTensor(n) => write!(f, "checkpoint is missing tensor {n}"),
            CheckpointError::UnknownTensor(n) => write!(f, "checkpoint has unknown tensor {n}"),
            CheckpointError::ShapeMismatch {
                name,
                expected,
                got,
            } => write!(f, "tensor {name}: shape {got:?} does not match {expected:?}"),
            CheckpointError::NonFinite(n) => write!(f, "tensor {n} contains non-finite values"),
            CheckpointError::InvalidConfig(m) => write!(f, "invalid config: {m}"),
        }
    }
}

impl std::error::Error for CheckpointError {}

impl From<std::io::Error> for CheckpointError {
    fn from(e: std::io::Error) -> Self {
        CheckpointError::Io(e)
    }
}

impl From<serde_json::Error> for CheckpointError {
    fn from(e: serde_json::Error) -> Self {
        CheckpointError::Json(e)
    }
}

#[derive(Serialize, Deserialize)]
struct TensorRecord {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
    /// Imaginary buffer for complex tensors.
    #[serde(skip_serializing_if = "Option::is_none")]
    imag: Option<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format_version: u32,
    config: ModelConfig,
    tensors: Vec<TensorRecord>,
}

pub fn save(path: &Path, config: &ModelConfig, params: &ModelParams) -> Result<(), CheckpointError> {
    let tensors = params
        .visit()
        .into_iter()
        .map(|(name, p)| match p {
            ParamRef::Real(t) => TensorRecord {
                name,
                shape: t.shape.clone(),
                data: t.data.clone(),
                imag: None,
            },
            ParamRef::Complex(t) => TensorRecord {
                name,
                shape: t.shape.clone(),
                data: t.re.clone(),
                imag: Some(t.im.clone()),
            },
        })
        .collect();
    let file = CheckpointFile {
        format_version: FORMAT_VERSION,
        config: config.clone(),
        tensors,
    };
    let json = serde_json::to_string(&file)?;
    std::fs::write(path, json)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<(ModelConfig, ModelParams), CheckpointError> {
    let raw = std::fs::read_to_string(path)?;
    let file: CheckpointFile = serde_json::from_str(&raw)?;
    if file.format_version != FORMAT_VERSION {
        return Err(CheckpointError::UnsupportedVersion(file.format_version));
    }
    let mut params = init_params(&file.config)
        .map_err(|e| CheckpointError::InvalidConfig(e.to_string()))?;

    let mut records: std::collections::HashMap<String, TensorRecord> = file
        .tensors
        .into_iter()
        .map(|t| (t.name.clone(), t))
        .collect();

    for (name, slot) in params.visit_mut() {
        let rec = records
            .remove(&name)
            .ok_or_else(|| CheckpointError::MissingTensor(name.clone()))?;
        match slot {
            ParamMut::Real(t) => {
                if rec.shape != t.shape || rec.data.len() != t.data.len() {
                    return Err(CheckpointError::ShapeMismatch {
                        name,
                        expected: t.shape.clone(),
                        got: rec.shape,
                    });
                }
                if rec.data.iter().any(|v| !v.is_finite()) {
                    return Err(CheckpointError::NonFinite(name));
                }
                t.data = rec.data;
            }
            ParamMut::Complex(t) => {
                let im = rec
                    .imag
                    .ok_or_else(|| CheckpointError::MissingTensor(format!("{name} (imag)")))?;
                if rec.shape != t.shape || rec.data.len() != t.re.len() || im.len() != t.im.len() {
                    return Err(CheckpointError::ShapeMismatch {
                        name,
                        expected: t.shape.clone(),
                        got: rec.shape,
                    });
                }
                if rec.data.iter().chain(im.iter()).any(|v| !v.is_finite()) {
                    return Err(CheckpointError::NonFinite(name));
                }
                t.re = rec.data;
                t.im = im;
            }
        }
    }
    if let Some(extra) = records.keys().next() {
        return Err(CheckpointError::UnknownTensor(extra.clone()));
    }
    Ok((file.config, params))
}
