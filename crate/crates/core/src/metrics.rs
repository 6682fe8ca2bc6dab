//! Hybrid seen/unseen classification and the class-incremental metrics.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::Features;
use crate::tensor::softmax_into;
use crate::text::{PromptParams, TextEncoder};
use crate::ClassId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingSource {
    Learned,
    Handcrafted,
}

#[derive(Debug, Clone, PartialEq)]
struct BankEntry {
    embedding: Vec<f64>,
    unit: Vec<f64>,
    source: EmbeddingSource,
}

/// One text embedding per class, each tagged with where it came from.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ClassEmbeddingBank {
    entries: BTreeMap<ClassId, BankEntry>,
}

fn unit(v: &[f64]) -> Option<Vec<f64>> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    (n > 0.0 && n.is_finite()).then(|| v.iter().map(|x| x / n).collect())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl ClassEmbeddingBank {
    pub fn new() -> Self {
        ClassEmbeddingBank::default()
    }

    pub fn insert(&mut self, class_id: ClassId, embedding: Vec<f64>, source: EmbeddingSource) -> Result<()> {
        if let Some(first) = self.entries.values().next() {
            if first.embedding.len() != embedding.len() {
                return Err(Error::Shape(format!(
                    "embedding of width {} in a bank of width {}",
                    embedding.len(),
                    first.embedding.len()
                )));
            }
        }
        let u = unit(&embedding).ok_or_else(|| Error::Domain(format!("class {class_id} has a zero embedding")))?;
        if self.entries.contains_key(&class_id) {
            return Err(Error::State(format!("class {class_id} is already in the bank")));
        }
        self.entries.insert(
            class_id,
            BankEntry {
                embedding,
                unit: u,
                source,
            },
        );
        Ok(())
    }

    /// Handcrafted embeddings for every registered class.
    pub fn handcrafted(text: &TextEncoder) -> Result<Self> {
        let mut bank = ClassEmbeddingBank::new();
        for c in text.class_ids() {
            bank.insert(c, text.handcrafted(c)?.to_vec(), EmbeddingSource::Handcrafted)?;
        }
        Ok(bank)
    }

    /// Learned prompts for classes in `params`, handcrafted for the rest.
    pub fn hybrid(text: &TextEncoder, params: &PromptParams) -> Result<Self> {
        let learned: Vec<ClassId> = params.classes().iter().copied().collect();
        let learned_embeddings = params.class_embeddings(&learned, text)?;
        let mut bank = ClassEmbeddingBank::new();
        for (c, z) in learned.iter().zip(learned_embeddings) {
            bank.insert(*c, z, EmbeddingSource::Learned)?;
        }
        for c in text.class_ids().filter(|c| !params.contains(*c)) {
            bank.insert(c, text.handcrafted(c)?.to_vec(), EmbeddingSource::Handcrafted)?;
        }
        Ok(bank)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn class_ids(&self) -> impl Iterator<Item = ClassId> + '_ {
        self.entries.keys().copied()
    }

    pub fn embedding(&self, class_id: ClassId) -> Option<&[f64]> {
        self.entries.get(&class_id).map(|e| e.embedding.as_slice())
    }

    pub fn source(&self, class_id: ClassId) -> Option<EmbeddingSource> {
        self.entries.get(&class_id).map(|e| e.source)
    }

    /// Copy holding only the classes in `keep`.
    pub fn restricted(&self, keep: &BTreeSet<ClassId>) -> Self {
        ClassEmbeddingBank {
            entries: self
                .entries
                .iter()
                .filter(|(c, _)| keep.contains(c))
                .map(|(c, e)| (*c, e.clone()))
                .collect(),
        }
    }

    fn cosines(&self, z: &[f64]) -> Result<Vec<f64>> {
        if self.entries.is_empty() {
            return Err(Error::State("the embedding bank is empty".into()));
        }
        let width = self.entries.values().next().expect("non-empty").unit.len();
        if z.len() != width {
            return Err(Error::Shape(format!("query of width {} against a bank of width {width}", z.len())));
        }
        let zu = unit(z).ok_or_else(|| Error::Domain("query has zero norm".into()))?;
        Ok(self.entries.values().map(|e| dot(&zu, &e.unit)).collect())
    }
}

/// `softmax(cos(z, e_c) / tau)` over the bank, in class-id order.
pub fn posterior(z: &[f64], bank: &ClassEmbeddingBank, tau: f64) -> Result<Vec<f64>> {
    let logits: Vec<f64> = bank.cosines(z)?.into_iter().map(|c| c / tau).collect();
    let mut p = vec![0.0; logits.len()];
    softmax_into(&logits, &mut p);
    Ok(p)
}

/// Class with the highest posterior; exact ties go to the lowest class id.
pub fn classify_hybrid(z: &[f64], bank: &ClassEmbeddingBank, tau: f64) -> Result<ClassId> {
    if !(tau > 0.0) {
        return Err(Error::Spec(format!("temperature must be positive, got {tau}")));
    }
    // argmax of the cosines is the argmax of the posterior
    let cos = bank.cosines(z)?;
    let mut best = 0;
    for (i, &c) in cos.iter().enumerate() {
        if c > cos[best] {
            best = i;
        }
    }
    Ok(bank.class_ids().nth(best).expect("index within bank"))
}

pub fn classify_batch(features: &Features, bank: &ClassEmbeddingBank, tau: f64) -> Result<Vec<ClassId>> {
    (0..features.len())
        .into_par_iter()
        .map(|i| classify_hybrid(features.row(i), bank, tau))
        .collect()
}

/// `A[t][i]`: accuracy on task `i` after training through task `t`, both
/// 0-based here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyMatrix {
    tasks: usize,
    entries: Vec<Vec<Option<f64>>>,
}

impl AccuracyMatrix {
    pub fn new(tasks: usize) -> Self {
        AccuracyMatrix {
            tasks,
            entries: vec![vec![None; tasks]; tasks],
        }
    }

    pub fn from_rows(rows: Vec<Vec<Option<f64>>>) -> Result<Self> {
        let tasks = rows.len();
        if rows.iter().any(|r| r.len() != tasks) {
            return Err(Error::Shape("accuracy matrix must be square".into()));
        }
        if rows.iter().flatten().flatten().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Domain("accuracies must lie in [0, 1]".into()));
        }
        Ok(AccuracyMatrix { tasks, entries: rows })
    }

    pub fn tasks(&self) -> usize {
        self.tasks
    }

    pub fn get(&self, t: usize, i: usize) -> Option<f64> {
        self.entries.get(t).and_then(|r| r.get(i)).copied().flatten()
    }

    pub fn rows(&self) -> &[Vec<Option<f64>>] {
        &self.entries
    }

    pub fn set(&mut self, t: usize, i: usize, value: f64) -> Result<()> {
        if t >= self.tasks || i >= self.tasks {
            return Err(Error::Index(format!("entry ({t}, {i}) outside a {0}x{0} matrix", self.tasks)));
        }
        if !(0.0..=1.0).contains(&value) {
            return Err(Error::Domain(format!("accuracy {value} outside [0, 1]")));
        }
        self.entries[t][i] = Some(value);
        Ok(())
    }

    pub fn is_complete(&self) -> bool {
        self.entries.iter().flatten().all(Option::is_some)
    }
}

/// Stores the fraction of `predictions` equal to `labels` at `(t, i)`.
pub fn record_accuracy(
    matrix: &mut AccuracyMatrix,
    t: usize,
    i: usize,
    predictions: &[ClassId],
    labels: &[ClassId],
) -> Result<f64> {
    if predictions.len() != labels.len() || labels.is_empty() {
        return Err(Error::Shape(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let correct = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    let acc = correct as f64 / labels.len() as f64;
    matrix.set(t, i, acc)?;
    Ok(acc)
}

/// Mean of the final row.
pub fn faa(matrix: &AccuracyMatrix) -> Result<f64> {
    let tasks = matrix.tasks();
    if tasks == 0 {
        return Err(Error::State("empty accuracy matrix".into()));
    }
    let last = tasks - 1;
    let mut sum = 0.0;
    for i in 0..tasks {
        sum += matrix
            .get(last, i)
            .ok_or_else(|| Error::State(format!("final row is missing task {}", i + 1)))?;
    }
    Ok(sum / tasks as f64)
}

/// Average over checkpoints `t < T` of the mean accuracy on tasks not yet
/// trained (`i > t`).
pub fn ci_transfer(matrix: &AccuracyMatrix) -> Result<f64> {
    let tasks = matrix.tasks();
    if tasks < 2 {
        return Err(Error::UndefinedMetric(format!(
            "transfer needs at least 2 tasks, got {tasks}"
        )));
    }
    let mut outer = 0.0;
    for t in 0..tasks - 1 {
        let mut inner = 0.0;
        for i in t + 1..tasks {
            inner += matrix.get(t, i).ok_or_else(|| {
                Error::State(format!("missing accuracy on task {} after task {}", i + 1, t + 1))
            })?;
        }
        outer += inner / (tasks - 1 - t) as f64;
    }
    Ok(outer / (tasks - 1) as f64)
}
