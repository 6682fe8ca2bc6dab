use std::collections::BTreeMap;
use std::path::Path;

use super::{GaussianModel, GeneratorKind, MogModel, VaeDecoder};
use crate::error::{Error, Result};
use crate::features::Features;
use crate::formats::store::{StoreEntry, StoreFile, KIND_GAUSSIAN, KIND_MOG, KIND_VAE};
use crate::rng::{seeded, stream, Rng};
use crate::ClassId;

/// Decoder side of one class's generator.
#[derive(Debug, Clone, PartialEq)]
pub enum GeneratorEntry {
    Gaussian(GaussianModel),
    Mog(MogModel),
    Vae(VaeDecoder),
}

impl GeneratorEntry {
    pub fn kind(&self) -> GeneratorKind {
        match self {
            GeneratorEntry::Gaussian(_) => GeneratorKind::Gaussian,
            GeneratorEntry::Mog(_) => GeneratorKind::Mog,
            GeneratorEntry::Vae(_) => GeneratorKind::Vae,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            GeneratorEntry::Gaussian(g) => g.dim(),
            GeneratorEntry::Mog(m) => m.dim(),
            GeneratorEntry::Vae(v) => v.dim(),
        }
    }

    pub fn sample_into(&self, rng: &mut Rng, n: usize, out: &mut Vec<f64>) {
        match self {
            GeneratorEntry::Gaussian(g) => g.sample_into(rng, n, out),
            GeneratorEntry::Mog(m) => m.sample_into(rng, n, out),
            GeneratorEntry::Vae(v) => v.sample_into(rng, n, out),
        }
    }

    pub fn sample(&self, n: usize, seed: u64) -> Features {
        let mut rng = seeded(seed, stream::GENERATOR_SAMPLE);
        let mut out = Vec::with_capacity(n * self.dim());
        self.sample_into(&mut rng, n, &mut out);
        Features::new(self.dim(), out).expect("rows of model dimension")
    }

    fn to_store_entry(&self, class_id: ClassId) -> StoreEntry {
        let layers = match self {
            GeneratorEntry::Gaussian(g) => vec![g.to_block()],
            GeneratorEntry::Mog(m) => m.to_blocks(),
            GeneratorEntry::Vae(v) => v.to_blocks(),
        };
        StoreEntry { class_id, layers }
    }
}

fn kind_tag(kind: GeneratorKind) -> u32 {
    match kind {
        GeneratorKind::Gaussian => KIND_GAUSSIAN,
        GeneratorKind::Mog => KIND_MOG,
        GeneratorKind::Vae => KIND_VAE,
    }
}

/// Append-only map from class id to its generator. All entries share one
/// kind and one feature dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorStore {
    kind: GeneratorKind,
    dim: usize,
    entries: BTreeMap<ClassId, GeneratorEntry>,
}

impl GeneratorStore {
    pub fn new(kind: GeneratorKind, dim: usize) -> Self {
        GeneratorStore {
            kind,
            dim,
            entries: BTreeMap::new(),
        }
    }

    pub fn kind(&self) -> GeneratorKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, class_id: ClassId) -> bool {
        self.entries.contains_key(&class_id)
    }

    pub fn class_ids(&self) -> impl ExactSizeIterator<Item = ClassId> + '_ {
        self.entries.keys().copied()
    }

    pub fn get(&self, class_id: ClassId) -> Option<&GeneratorEntry> {
        self.entries.get(&class_id)
    }

    pub fn entries(&self) -> impl Iterator<Item = (ClassId, &GeneratorEntry)> {
        self.entries.iter().map(|(&c, e)| (c, e))
    }

    /// Adds a new class. Existing entries can never be replaced.
    pub fn insert(&mut self, class_id: ClassId, entry: GeneratorEntry) -> Result<()> {
        if entry.kind() != self.kind {
            return Err(Error::State(format!(
                "cannot add a {} generator to a {} store",
                entry.kind(),
                self.kind
            )));
        }
        if entry.dim() != self.dim {
            return Err(Error::Shape(format!(
                "generator for class {class_id} has dimension {}, store has {}",
                entry.dim(),
                self.dim
            )));
        }
        if self.entries.contains_key(&class_id) {
            return Err(Error::State(format!("class {class_id} is already stored")));
        }
        self.entries.insert(class_id, entry);
        Ok(())
    }

    pub fn sample_decoder(&self, class_id: ClassId, n: usize, seed: u64) -> Result<Features> {
        let entry = self
            .entries
            .get(&class_id)
            .ok_or_else(|| Error::Lookup(format!("no generator stored for class {class_id}")))?;
        Ok(entry.sample(n, seed))
    }

    pub fn to_store_file(&self) -> StoreFile {
        StoreFile {
            kind: kind_tag(self.kind),
            entries: self.entries.iter().map(|(&c, e)| e.to_store_entry(c)).collect(),
        }
    }

    /// Rebuilds a store from a decoded file, checking every entry against
    /// `expected_dim` when given.
    pub fn from_store_file(file: &StoreFile, expected_dim: Option<usize>) -> Result<Self> {
        let kind = match file.kind {
            KIND_GAUSSIAN => GeneratorKind::Gaussian,
            KIND_MOG => GeneratorKind::Mog,
            KIND_VAE => GeneratorKind::Vae,
            other => return Err(Error::format(8, format!("store kind {other} is not a generator kind"))),
        };
        let mut entries = BTreeMap::new();
        let mut dim = expected_dim;
        for e in &file.entries {
            let entry = match kind {
                GeneratorKind::Gaussian => {
                    let [block] = e.layers.as_slice() else {
                        return Err(Error::format(
                            0,
                            format!("gaussian entry for class {} has {} layers", e.class_id, e.layers.len()),
                        ));
                    };
                    GeneratorEntry::Gaussian(GaussianModel::from_block(block)?)
                }
                GeneratorKind::Mog => GeneratorEntry::Mog(MogModel::from_blocks(&e.layers)?),
                GeneratorKind::Vae => GeneratorEntry::Vae(VaeDecoder::from_blocks(&e.layers)?),
            };
            match dim {
                Some(d) if d != entry.dim() => {
                    return Err(Error::format(
                        0,
                        format!("class {} has dimension {}, expected {d}", e.class_id, entry.dim()),
                    ))
                }
                _ => dim = Some(entry.dim()),
            }
            if entries.insert(e.class_id, entry).is_some() {
                return Err(Error::format(0, format!("class {} appears twice", e.class_id)));
            }
        }
        Ok(GeneratorStore {
            kind,
            dim: dim.unwrap_or(0),
            entries,
        })
    }
}

pub fn save_store(store: &GeneratorStore, path: &Path) -> Result<()> {
    store.to_store_file().write(path)
}

pub fn load_store(path: &Path, expected_dim: Option<usize>) -> Result<GeneratorStore> {
    GeneratorStore::from_store_file(&StoreFile::read(path)?, expected_dim)
}
