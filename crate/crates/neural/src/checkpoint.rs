//! Checkpoint directory: `manifest.json` plus raw row-major little-endian f32
//! blobs for the parameters and both Adam moments.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::Seq2SeqConfig;
use crate::model::{Layout, Seq2SeqParams};
use crate::optim::OptimizerState;

pub const FORMAT: &str = "retroseq-seq2seq";
pub const VERSION: u32 = 1;
const BLOBS: [&str; 3] = ["params.bin", "adam_m.bin", "adam_v.bin"];

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed checkpoint: {0}")]
    Format(String),
    #[error("checkpoint version {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("tensor {name}: expected shape {expected:?}, found {found:?}")]
    ShapeMismatch {
        name: String,
        expected: (usize, usize),
        found: (usize, usize),
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: (usize, usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub config: Seq2SeqConfig,
    pub step: u64,
    pub tensors: Vec<TensorEntry>,
    pub blobs: Vec<String>,
}

fn write_blob(path: &Path, tensors: &[Array2<f32>]) -> std::io::Result<()> {
    let mut bytes = Vec::with_capacity(tensors.iter().map(|t| t.len() * 4).sum());
    for t in tensors {
        for x in t.iter() {
            bytes.extend_from_slice(&x.to_le_bytes());
        }
    }
    fs::write(path, bytes)
}

fn read_blob(path: &Path, shapes: &[(usize, usize)]) -> Result<Vec<Array2<f32>>, CheckpointError> {
    let bytes = fs::read(path)?;
    let total: usize = shapes.iter().map(|(r, c)| r * c).sum();
    if bytes.len() != total * 4 {
        return Err(CheckpointError::Format(format!(
            "{} holds {} bytes, expected {}",
            path.display(),
            bytes.len(),
            total * 4
        )));
    }
    let mut floats = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]));
    Ok(shapes
        .iter()
        .map(|&s| Array2::from_shape_simple_fn(s, || floats.next().expect("length checked")))
        .collect())
}

pub fn save_checkpoint(dir: &Path, params: &Seq2SeqParams<f32>, opt: &OptimizerState) -> Result<(), CheckpointError> {
    fs::create_dir_all(dir)?;
    let manifest = Manifest {
        format: FORMAT.into(),
        version: VERSION,
        config: params.config.clone(),
        step: opt.step,
        tensors: params
            .layout
            .names
            .iter()
            .zip(&params.layout.shapes)
            .map(|(n, &s)| TensorEntry {
                name: n.clone(),
                shape: s,
            })
            .collect(),
        blobs: BLOBS.iter().map(|s| s.to_string()).collect(),
    };
    for (name, data) in BLOBS.iter().zip([&params.tensors, &opt.m, &opt.v]) {
        write_blob(&dir.join(name), data)?;
    }
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| CheckpointError::Format(e.to_string()))?;
    fs::write(dir.join("manifest.json"), json)?;
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<Manifest, CheckpointError> {
    let text = fs::read_to_string(dir.join("manifest.json"))?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| CheckpointError::Format(e.to_string()))?;
    let version = value.get("version").and_then(|v| v.as_u64());
    match version {
        Some(v) if v == VERSION as u64 => {}
        Some(v) => {
            return Err(CheckpointError::VersionMismatch {
                found: v as u32,
                expected: VERSION,
            })
        }
        None => return Err(CheckpointError::Format("missing version".into())),
    }
    let m: Manifest = serde_json::from_value(value).map_err(|e| CheckpointError::Format(e.to_string()))?;
    if m.format != FORMAT {
        return Err(CheckpointError::Format(format!("unknown format {:?}", m.format)));
    }
    Ok(m)
}

/// Loads parameters and optimizer state; shapes are checked against the
/// layout implied by the stored config.
pub fn load_checkpoint(dir: &Path) -> Result<(Seq2SeqParams<f32>, OptimizerState), CheckpointError> {
    let m = read_manifest(dir)?;
    m.config
        .validate()
        .map_err(|e| CheckpointError::Format(e.to_string()))?;
    let layout = Layout::new(&m.config);
    if m.tensors.len() != layout.len() {
        return Err(CheckpointError::Format(format!(
            "{} tensors listed, layout has {}",
            m.tensors.len(),
            layout.len()
        )));
    }
    for (entry, (name, &shape)) in m.tensors.iter().zip(layout.names.iter().zip(&layout.shapes)) {
        if &entry.name != name {
            return Err(CheckpointError::Format(format!(
                "tensor {} where {name} expected",
                entry.name
            )));
        }
        if entry.shape != shape {
            return Err(CheckpointError::ShapeMismatch {
                name: name.clone(),
                expected: shape,
                found: entry.shape,
            });
        }
    }
    if m.blobs.len() != BLOBS.len() {
        return Err(CheckpointError::Format("expected three blobs".into()));
    }
    let mut blobs = Vec::new();
    for name in &m.blobs {
        if name.contains('/') || name.contains('\\') {
            return Err(CheckpointError::Format(format!("bad blob name {name:?}")));
        }
        blobs.push(read_blob(&dir.join(name), &layout.shapes)?);
    }
    let v = blobs.pop().expect("three blobs");
    let mo = blobs.pop().expect("three blobs");
    let tensors = blobs.pop().expect("three blobs");
    let params = Seq2SeqParams {
        config: m.config,
        layout,
        tensors,
    };
    Ok((params, OptimizerState { m: mo, v, step: m.step }))
}

/// Fails with [`CheckpointError::ShapeMismatch`] unless the model's output
/// layer matches a vocabulary of `vocab_size` tokens.
pub fn expect_vocab(params: &Seq2SeqParams<f32>, vocab_size: usize) -> Result<(), CheckpointError> {
    let found = params.tensors[params.layout.embedding].dim();
    if found.0 != vocab_size {
        return Err(CheckpointError::ShapeMismatch {
            name: "embedding".into(),
            expected: (vocab_size, found.1),
            found,
        });
    }
    Ok(())
}
