use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ClassId;

pub type TokenId = u32;

pub const EOT: TokenId = 0;
const RESERVED: [&str; 4] = ["<eot>", "a", "photo", "of"];

/// Word-level vocabulary plus the class-name registry.
///
/// Ids are dense from zero. `<eot>` is id 0 and the template words follow,
/// so the handcrafted template has the same ids in every run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    words: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, TokenId>,
    classes: BTreeMap<ClassId, (String, Vec<TokenId>)>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Vocabulary::new()
    }
}

impl Vocabulary {
    pub fn new() -> Self {
        let mut v = Vocabulary {
            words: Vec::new(),
            index: HashMap::new(),
            classes: BTreeMap::new(),
        };
        for w in RESERVED {
            v.intern(w);
        }
        v
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn id(&self, word: &str) -> Option<TokenId> {
        self.index.get(word).copied()
    }

    pub fn word(&self, id: TokenId) -> Option<&str> {
        self.words.get(id as usize).map(String::as_str)
    }

    fn intern(&mut self, word: &str) -> TokenId {
        if let Some(&id) = self.index.get(word) {
            return id;
        }
        let id = self.words.len() as TokenId;
        self.words.push(word.to_owned());
        self.index.insert(word.to_owned(), id);
        id
    }

    /// Lowercases, splits on whitespace and hyphens, and interns each word.
    pub fn tokenize(&mut self, name: &str) -> Vec<TokenId> {
        name.to_lowercase()
            .split(|c: char| c.is_whitespace() || c == '-')
            .filter(|w| !w.is_empty())
            .map(|w| self.intern(w))
            .collect()
    }

    /// Registers a class name. Re-registering the same name is a no-op.
    pub fn register_class(&mut self, class_id: ClassId, name: &str) -> Result<Vec<TokenId>> {
        if let Some((existing, ids)) = self.classes.get(&class_id) {
            if existing != name {
                return Err(Error::State(format!(
                    "class {class_id} is already registered as {existing:?}"
                )));
            }
            return Ok(ids.clone());
        }
        let ids = self.tokenize(name);
        if ids.is_empty() {
            return Err(Error::Spec(format!("class {class_id} has an empty name")));
        }
        self.classes.insert(class_id, (name.to_owned(), ids.clone()));
        Ok(ids)
    }

    pub fn class_tokens(&self, class_id: ClassId) -> Result<&[TokenId]> {
        self.classes
            .get(&class_id)
            .map(|(_, ids)| ids.as_slice())
            .ok_or_else(|| Error::Lookup(format!("class {class_id} is not registered")))
    }

    pub fn class_name(&self, class_id: ClassId) -> Option<&str> {
        self.classes.get(&class_id).map(|(n, _)| n.as_str())
    }

    pub fn class_ids(&self) -> impl Iterator<Item = ClassId> + '_ {
        self.classes.keys().copied()
    }

    /// `a photo of a <class> <eot>`.
    pub fn handcrafted_ids(&self, class_id: ClassId) -> Result<Vec<TokenId>> {
        let a = self.id("a").expect("reserved");
        let mut ids = vec![a, self.id("photo").expect("reserved"), self.id("of").expect("reserved"), a];
        ids.extend_from_slice(self.class_tokens(class_id)?);
        ids.push(EOT);
        Ok(ids)
    }

    /// Rebuilds the lookup index after deserialization.
    pub fn reindex(&mut self) {
        self.index = self
            .words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i as TokenId))
            .collect();
    }
}
