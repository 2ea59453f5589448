//! Checkpoint archive: every parameter array keyed by hierarchical name,
//! plus the model config and optional optimizer state.
//!
//! Layout (documented in the README):
//!
//! ```text
//! bytes 0..4    magic "SFCK"
//! bytes 4..8    format version, u32 little-endian (currently 1)
//! bytes 8..16   header length in bytes, u64 little-endian
//! header        JSON: model config, training progress, array directory
//! payload       f64 little-endian array data, concatenated in directory order
//! ```
//!
//! Writes are atomic: the file is assembled under a temporary name and
//! renamed into place.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use structfuse_core::network::{Model, ModelConfig};
use structfuse_core::optim::AdamState;
use structfuse_core::tensor::Tensor;
use thiserror::Error;

const MAGIC: &[u8; 4] = b"SFCK";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    BadVersion(u32),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Core(#[from] structfuse_core::Error),
}

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
struct ArrayEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize, Debug, Clone)]
struct Header {
    tool_version: String,
    model_config: ModelConfig,
    spf_enabled: bool,
    phase: Option<String>,
    step: Option<u64>,
    total_steps: Option<u64>,
    arrays: Vec<ArrayEntry>,
}

/// In-memory view of a loaded checkpoint.
pub struct Checkpoint {
    pub model_config: ModelConfig,
    pub spf_enabled: bool,
    pub phase: Option<String>,
    pub step: Option<u64>,
    pub total_steps: Option<u64>,
    params: Vec<(String, Tensor)>,
    adam_m: Vec<Tensor>,
    adam_v: Vec<Tensor>,
}

impl Checkpoint {
    pub fn into_model(self) -> Result<Model, CheckpointError> {
        Ok(Model::from_params(self.model_config, self.params)?)
    }

    /// Splits into a model and, when the archive carries optimizer
    /// moments, the Adam state for resuming.
    pub fn into_model_and_adam(self) -> Result<(Model, Option<AdamState>), CheckpointError> {
        let step = self.step.unwrap_or(0);
        let (m, v) = (self.adam_m, self.adam_v);
        let model = Model::from_params(self.model_config, self.params)?;
        let adam = if m.is_empty() {
            None
        } else {
            Some(AdamState::from_parts(m, v, step, model.params())?)
        };
        Ok((model, adam))
    }
}

/// Training progress recorded alongside the arrays.
#[derive(Clone, Copy, Debug)]
pub struct Progress {
    pub step: u64,
    pub total_steps: u64,
    pub phase: &'static str,
}

/// Serializes a model (and optionally its optimizer state) to `path`.
pub fn save(
    path: &Path,
    model: &Model,
    spf_enabled: bool,
    adam: Option<&AdamState>,
    progress: Option<Progress>,
) -> Result<(), CheckpointError> {
    let mut arrays: Vec<ArrayEntry> = Vec::new();
    let mut payload: Vec<u8> = Vec::new();
    let push = |name: String, t: &Tensor, payload: &mut Vec<u8>, arrays: &mut Vec<ArrayEntry>| {
        arrays.push(ArrayEntry {
            name,
            shape: t.shape().to_vec(),
        });
        for v in t.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    };
    for (name, t) in model.params().entries() {
        push(format!("param.{name}"), t, &mut payload, &mut arrays);
    }
    if let Some(adam) = adam {
        for (i, t) in adam.first_moments().iter().enumerate() {
            push(
                format!("adam_m.{}", model.params().name(i)),
                t,
                &mut payload,
                &mut arrays,
            );
        }
        for (i, t) in adam.second_moments().iter().enumerate() {
            push(
                format!("adam_v.{}", model.params().name(i)),
                t,
                &mut payload,
                &mut arrays,
            );
        }
    }
    let header = Header {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        model_config: *model.config(),
        spf_enabled,
        phase: progress.map(|p| p.phase.to_string()),
        step: progress.map(|p| p.step),
        total_steps: progress.map(|p| p.total_steps),
        arrays,
    };
    let header_bytes =
        serde_json::to_vec(&header).map_err(|e| CheckpointError::Corrupt(e.to_string()))?;

    let mut bytes = Vec::with_capacity(16 + header_bytes.len() + payload.len());
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&VERSION.to_le_bytes());
    bytes.extend_from_slice(&(header_bytes.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&header_bytes);
    bytes.extend_from_slice(&payload);

    let tmp = path.with_extension("sfck.tmp");
    let io_err = |source: std::io::Error| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut f = fs::File::create(&tmp).map_err(io_err)?;
    f.write_all(&bytes).map_err(io_err)?;
    f.sync_all().map_err(io_err)?;
    drop(f);
    fs::rename(&tmp, path).map_err(io_err)?;
    Ok(())
}

/// Reads a checkpoint archive back into memory.
pub fn load(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })?;
    if bytes.len() < 16 || &bytes[0..4] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(CheckpointError::BadVersion(version));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    if bytes.len() < 16 + hlen {
        return Err(CheckpointError::Corrupt("truncated header".into()));
    }
    let header: Header = serde_json::from_slice(&bytes[16..16 + hlen])
        .map_err(|e| CheckpointError::Corrupt(e.to_string()))?;

    let mut offset = 16 + hlen;
    let mut params = Vec::new();
    let mut adam_m = Vec::new();
    let mut adam_v = Vec::new();
    for entry in &header.arrays {
        let n: usize = entry.shape.iter().product();
        let end = offset + 8 * n;
        if bytes.len() < end {
            return Err(CheckpointError::Corrupt(format!(
                "truncated payload at array {}",
                entry.name
            )));
        }
        let data: Vec<f64> = bytes[offset..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        offset = end;
        let tensor = Tensor::new(entry.shape.clone(), data)?;
        if let Some(name) = entry.name.strip_prefix("param.") {
            params.push((name.to_string(), tensor));
        } else if entry.name.starts_with("adam_m.") {
            adam_m.push(tensor);
        } else if entry.name.starts_with("adam_v.") {
            adam_v.push(tensor);
        } else {
            return Err(CheckpointError::Corrupt(format!(
                "unknown array {}",
                entry.name
            )));
        }
    }
    Ok(Checkpoint {
        model_config: header.model_config,
        spf_enabled: header.spf_enabled,
        phase: header.phase,
        step: header.step,
        total_steps: header.total_steps,
        params,
        adam_m,
        adam_v,
    })
}
