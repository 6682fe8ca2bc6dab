//! `CGILSTR1` layer-store files.
//!
//! ```text
//! magic        8 bytes  "CGILSTR1"
//! kind         u32 LE
//! entry count  u32 LE
//! per entry:
//!   class id     u32 LE
//!   layer count  u32 LE
//!   per layer:
//!     rows u32 LE, cols u32 LE
//!     weights  rows*cols f32 LE, row-major
//!     biases   cols f32 LE
//! ```
//!
//! The same container holds generator stores and frozen text tower
//! snapshots; the kind tag says how to interpret the layers.

use std::path::Path;

use super::{write_atomic, Reader};
use crate::error::{Error, Result};

pub const STORE_MAGIC: &[u8; 8] = b"CGILSTR1";

pub const KIND_GAUSSIAN: u32 = 0;
pub const KIND_MOG: u32 = 1;
pub const KIND_VAE: u32 = 2;
pub const KIND_TOWER: u32 = 3;

/// One affine layer as stored on disk, already widened to `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerBlock {
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl LayerBlock {
    pub fn new(rows: usize, cols: usize, weights: Vec<f64>, biases: Vec<f64>) -> Result<Self> {
        if weights.len() != rows * cols || biases.len() != cols {
            return Err(Error::Shape(format!(
                "layer {rows}x{cols} given {} weights and {} biases",
                weights.len(),
                biases.len()
            )));
        }
        Ok(LayerBlock {
            rows,
            cols,
            weights,
            biases,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StoreEntry {
    pub class_id: u32,
    pub layers: Vec<LayerBlock>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StoreFile {
    pub kind: u32,
    pub entries: Vec<StoreEntry>,
}

impl StoreFile {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(STORE_MAGIC);
        out.extend_from_slice(&self.kind.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for entry in &self.entries {
            out.extend_from_slice(&entry.class_id.to_le_bytes());
            out.extend_from_slice(&(entry.layers.len() as u32).to_le_bytes());
            for layer in &entry.layers {
                out.extend_from_slice(&(layer.rows as u32).to_le_bytes());
                out.extend_from_slice(&(layer.cols as u32).to_le_bytes());
                for v in layer.weights.iter().chain(&layer.biases) {
                    out.extend_from_slice(&(*v as f32).to_le_bytes());
                }
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(STORE_MAGIC)?;
        let kind = r.u32("kind tag")?;
        let count = r.u32("entry count")?;
        let mut entries = Vec::with_capacity(count.min(1 << 16) as usize);
        for _ in 0..count {
            let class_id = r.u32("class id")?;
            let n_layers = r.u32("layer count")?;
            let mut layers = Vec::with_capacity(n_layers.min(1 << 10) as usize);
            for _ in 0..n_layers {
                let at = r.offset();
                let rows = r.u32("layer rows")? as usize;
                let cols = r.u32("layer cols")? as usize;
                if rows == 0 || cols == 0 {
                    return Err(Error::format(at, format!("empty layer {rows}x{cols}")));
                }
                let weights = r.f32s(rows * cols, "layer weights")?;
                let biases = r.f32s(cols, "layer biases")?;
                layers.push(LayerBlock {
                    rows,
                    cols,
                    weights,
                    biases,
                });
            }
            entries.push(StoreEntry { class_id, layers });
        }
        r.finish()?;
        Ok(StoreFile { kind, entries })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.encode())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        StoreFile::decode(&bytes)
    }
}
