//! Frozen text tower, vocabulary and learnable prompt parameters.

mod prompt;
mod tower;
mod vocab;

pub use prompt::{encode_prompt, AssembledPrompt, BoundPrompts, PromptConfig, PromptMode, PromptParams, Slot};
pub use tower::{handcrafted_embedding, BoundTower, FrozenTextTower, TowerConfig, LAYER_NORM_EPS};
pub use vocab::{TokenId, Vocabulary, EOT};

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::ClassId;

/// Tower, vocabulary and the cached handcrafted embedding of every
/// registered class.
#[derive(Debug, Clone)]
pub struct TextEncoder {
    pub tower: FrozenTextTower,
    pub vocab: Vocabulary,
    handcrafted: BTreeMap<ClassId, Vec<f64>>,
}

impl TextEncoder {
    pub fn new(tower: FrozenTextTower) -> Self {
        TextEncoder {
            tower,
            vocab: Vocabulary::new(),
            handcrafted: BTreeMap::new(),
        }
    }

    /// Registers a class name and caches its handcrafted embedding.
    pub fn register_class(&mut self, class_id: ClassId, name: &str) -> Result<()> {
        self.vocab.register_class(class_id, name)?;
        if !self.handcrafted.contains_key(&class_id) {
            let z = handcrafted_embedding(class_id, &self.tower, &self.vocab)?;
            self.handcrafted.insert(class_id, z);
        }
        Ok(())
    }

    pub fn handcrafted(&self, class_id: ClassId) -> Result<&[f64]> {
        self.handcrafted
            .get(&class_id)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Lookup(format!("class {class_id} is not registered")))
    }

    pub fn class_ids(&self) -> impl Iterator<Item = ClassId> + '_ {
        self.handcrafted.keys().copied()
    }
}
