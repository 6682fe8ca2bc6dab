//! `CGILEMB1` embedding files and their JSON sidecar manifests.
//!
//! ```text
//! magic    8 bytes  "CGILEMB1"
//! dim      u32 LE
//! count    u32 LE
//! count records of:
//!   class id  u32 LE
//!   features  dim f32 LE
//! ```
//!
//! The manifest lives next to the binary at `<file>.json` and maps class ids
//! to names. Every class id used by a record must appear in it.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{write_atomic, Reader};
use crate::error::{Error, Result};
use crate::features::{Features, LabeledFeatures};
use crate::ClassId;

pub const EMBEDDING_MAGIC: &[u8; 8] = b"CGILEMB1";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingManifest {
    pub format_version: u32,
    pub dim: usize,
    pub count: usize,
    pub classes: BTreeMap<ClassId, String>,
    pub source: String,
    /// Free-form generation or extraction parameters.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub parameters: BTreeMap<String, serde_json::Value>,
}

/// A loaded embedding file: labelled features plus the manifest that described them.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    pub data: LabeledFeatures,
    pub manifest: EmbeddingManifest,
}

pub fn manifest_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".json");
    PathBuf::from(name)
}

pub fn encode_records(data: &LabeledFeatures) -> Vec<u8> {
    let dim = data.dim();
    let mut out = Vec::with_capacity(16 + data.len() * (4 + 4 * dim));
    out.extend_from_slice(EMBEDDING_MAGIC);
    out.extend_from_slice(&(dim as u32).to_le_bytes());
    out.extend_from_slice(&(data.len() as u32).to_le_bytes());
    for (&label, row) in data.labels.iter().zip(data.features.rows()) {
        out.extend_from_slice(&label.to_le_bytes());
        for v in row {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    out
}

pub fn decode_records(bytes: &[u8]) -> Result<LabeledFeatures> {
    let mut r = Reader::new(bytes);
    r.magic(EMBEDDING_MAGIC)?;
    let dim_at = r.offset();
    let dim = r.u32("dim")? as usize;
    if dim == 0 {
        return Err(Error::format(dim_at, "dimension must be positive"));
    }
    let count = r.u32("record count")? as usize;
    let needed = count as u64 * (4 + 4 * dim as u64);
    if r.remaining() as u64 != needed {
        let at = r.offset() + (r.remaining() as u64).min(needed);
        return Err(Error::format(
            at,
            format!(
                "header declares {count} records of dimension {dim} ({needed} bytes) but {} bytes follow",
                r.remaining()
            ),
        ));
    }
    let mut labels = Vec::with_capacity(count);
    let mut data = Vec::with_capacity(count * dim);
    for _ in 0..count {
        labels.push(r.u32("class id")?);
        data.extend(r.f32s(dim, "features")?);
    }
    r.finish()?;
    LabeledFeatures::new(Features::new(dim, data)?, labels)
}

/// Cross-checks a decoded file against its manifest.
pub fn validate(data: &LabeledFeatures, manifest: &EmbeddingManifest) -> Result<()> {
    if manifest.dim != data.dim() {
        return Err(Error::ManifestMismatch(format!(
            "manifest dim {} but file dim {}",
            manifest.dim,
            data.dim()
        )));
    }
    if manifest.count != data.len() {
        return Err(Error::ManifestMismatch(format!(
            "manifest count {} but file holds {} records",
            manifest.count,
            data.len()
        )));
    }
    if let Some(missing) = data.labels.iter().find(|l| !manifest.classes.contains_key(l)) {
        return Err(Error::ManifestMismatch(format!(
            "class id {missing} appears in records but not in the manifest"
        )));
    }
    Ok(())
}

pub fn write_embedding_file(path: &Path, data: &LabeledFeatures, manifest: &EmbeddingManifest) -> Result<()> {
    validate(data, manifest)?;
    write_atomic(path, &encode_records(data))?;
    write_atomic(&manifest_path(path), serde_json::to_string_pretty(manifest)?.as_bytes())
}

pub fn load_embedding_file(path: &Path) -> Result<EmbeddingSet> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let data = decode_records(&bytes)?;
    let mpath = manifest_path(path);
    let text = std::fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let manifest: EmbeddingManifest = serde_json::from_str(&text)?;
    validate(&data, &manifest)?;
    Ok(EmbeddingSet { data, manifest })
}
