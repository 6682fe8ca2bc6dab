//! Prompt alignment on replayed features and the per-task CGIL step.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{Features, LabeledFeatures};
use crate::generative::{fit_generator, GeneratorConfig, GeneratorStore};
use crate::rng::{derive, seeded, stream};
use crate::tensor::{Adam, AdamConfig, Tape};
use crate::text::{PromptConfig, PromptParams, TextEncoder};
use crate::ClassId;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub temperature: f64,
    /// Synthetic samples drawn per stored class.
    pub per_class: usize,
    pub regenerate_per_epoch: bool,
}

impl Default for AlignConfig {
    fn default() -> Self {
        AlignConfig {
            learning_rate: 0.03,
            batch_size: 128,
            epochs: 2,
            temperature: 0.01,
            per_class: 2000,
            regenerate_per_epoch: false,
        }
    }
}

impl AlignConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !(self.temperature > 0.0) || self.batch_size == 0 || self.per_class == 0 {
            return Err(Error::Spec(
                "alignment learning rate, temperature, batch size and per-class count must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Replayed features for every stored class, shuffled.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub data: LabeledFeatures,
    pub per_class: usize,
}

impl SyntheticDataset {
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn classes(&self) -> BTreeSet<ClassId> {
        self.data.labels.iter().copied().collect()
    }
}

/// Draws `per_class` samples from every stored decoder, then shuffles.
pub fn build_synthetic_dataset(store: &GeneratorStore, per_class: usize, seed: u64) -> Result<SyntheticDataset> {
    if store.is_empty() {
        return Err(Error::State("cannot replay from an empty generator store".into()));
    }
    let classes: Vec<ClassId> = store.class_ids().collect();
    let blocks: Vec<Features> = classes
        .par_iter()
        .map(|&c| store.sample_decoder(c, per_class, derive(seed, u64::from(c))))
        .collect::<Result<_>>()?;
    let mut features = Features::empty(store.dim());
    let mut labels = Vec::with_capacity(per_class * classes.len());
    for (c, block) in classes.iter().zip(&blocks) {
        features.extend(block)?;
        labels.extend(std::iter::repeat_n(*c, block.len()));
    }
    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.shuffle(&mut seeded(seed, stream::DATASET_SHUFFLE));
    let data = LabeledFeatures::new(features, labels)?.select(&order);
    Ok(SyntheticDataset { data, per_class })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AlignLog {
    pub epoch_loss: Vec<f64>,
    pub epoch_accuracy: Vec<f64>,
    pub steps: u64,
}

/// Tunes the trainable prompt parameters by cross-entropy over
/// `cos(feature, z_txt^c) / temperature` for every class in `params`.
pub fn align_prompts(
    data: &LabeledFeatures,
    params: &mut PromptParams,
    text: &TextEncoder,
    config: &AlignConfig,
    seed: u64,
) -> Result<AlignLog> {
    let mut aligner = Aligner::new(params, config)?;
    let mut log = AlignLog::default();
    for epoch in 0..config.epochs {
        aligner.epoch(data, params, text, seed, epoch, &mut log)?;
    }
    Ok(log)
}

/// Optimizer state shared across the epochs of one alignment phase.
struct Aligner {
    adam: Adam,
    config: AlignConfig,
    columns: BTreeMap<ClassId, usize>,
}

impl Aligner {
    fn new(params: &PromptParams, config: &AlignConfig) -> Result<Self> {
        config.validate()?;
        Ok(Aligner {
            adam: Adam::new(AdamConfig::with_lr(config.learning_rate)),
            config: *config,
            columns: params.classes().iter().enumerate().map(|(i, &c)| (c, i)).collect(),
        })
    }

    fn epoch(
        &mut self,
        data: &LabeledFeatures,
        params: &mut PromptParams,
        text: &TextEncoder,
        seed: u64,
        epoch: usize,
        log: &mut AlignLog,
    ) -> Result<()> {
        let targets: Vec<usize> = data
            .labels
            .iter()
            .map(|c| {
                self.columns
                    .get(c)
                    .copied()
                    .ok_or_else(|| Error::State(format!("label {c} has no prompt parameters")))
            })
            .collect::<Result<_>>()?;
        if data.is_empty() {
            return Err(Error::InsufficientData("alignment data is empty".into()));
        }
        let classes: Vec<ClassId> = self.columns.keys().copied().collect();
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut seeded(seed, stream::ALIGN_BATCHES | epoch as u64));
        let d = data.dim();
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for batch in order.chunks(self.config.batch_size) {
            let mut tape = Tape::new();
            let tower = text.tower.bind(&mut tape);
            let bound = params.bind(&mut tape);
            let mut rows = Vec::with_capacity(classes.len());
            for &c in &classes {
                rows.push(params.encode_class(&mut tape, &tower, &bound, c, text)?);
            }
            let z = tape.concat_rows(&rows)?;
            let mut x = Vec::with_capacity(batch.len() * d);
            for &i in batch {
                x.extend_from_slice(data.features.row(i));
            }
            let x = tape.constant(batch.len(), d, x)?;
            let cos = tape.cosine_matrix(x, z)?;
            let logits = tape.scale(cos, 1.0 / self.config.temperature);
            let labels: Vec<usize> = batch.iter().map(|&i| targets[i]).collect();
            let loss = tape.softmax_cross_entropy(logits, &labels)?;
            let value = tape.scalar(loss);
            if !value.is_finite() {
                return Err(Error::Numeric(format!("alignment loss became {value} in epoch {epoch}")));
            }
            let lv = tape.value(logits);
            let c = classes.len();
            correct += labels
                .iter()
                .enumerate()
                .filter(|&(r, &l)| {
                    let row = &lv[r * c..(r + 1) * c];
                    row.iter().enumerate().all(|(k, &v)| v < row[l] || (v == row[l] && k >= l))
                })
                .count();
            loss_sum += value * batch.len() as f64;
            let grads = tape.backward(loss)?;
            params.absorb(&grads, &bound)?;
            let mut trainable = params.trainable_mut();
            if !trainable.is_empty() {
                self.adam.step(&mut trainable)?;
            }
            if !params.trainable_mut().iter().all(|t| t.all_finite()) {
                return Err(Error::Numeric(format!("prompt parameters became non-finite in epoch {epoch}")));
            }
            log.steps += 1;
        }
        log.epoch_loss.push(loss_sum / data.len() as f64);
        log.epoch_accuracy.push(correct as f64 / data.len() as f64);
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub generator: GeneratorConfig,
    pub prompt: PromptConfig,
    pub align: AlignConfig,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskLog {
    pub task: usize,
    pub classes: Vec<ClassId>,
    pub train_size: usize,
    pub align: AlignLog,
}

/// Engine state carried across tasks: frozen text side, decoders of every
/// seen class and the prompt parameters. Raw task features are never kept.
#[derive(Debug, Clone)]
pub struct Engine {
    config: EngineConfig,
    text: TextEncoder,
    store: GeneratorStore,
    params: PromptParams,
    tasks_done: usize,
    last_replay: BTreeSet<ClassId>,
}

impl Engine {
    pub fn new(config: EngineConfig, text: TextEncoder, dim: usize) -> Result<Self> {
        config.align.validate()?;
        if text.tower.d_txt() != dim {
            return Err(Error::Spec(format!(
                "text embeddings have width {}, visual features {dim}",
                text.tower.d_txt()
            )));
        }
        let params = PromptParams::new(config.prompt, text.tower.d_tok(), text.tower.d_txt(), config.seed)?;
        Ok(Engine {
            store: GeneratorStore::new(config.generator.kind, dim),
            config,
            text,
            params,
            tasks_done: 0,
            last_replay: BTreeSet::new(),
        })
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn text(&self) -> &TextEncoder {
        &self.text
    }

    pub fn store(&self) -> &GeneratorStore {
        &self.store
    }

    pub fn params(&self) -> &PromptParams {
        &self.params
    }

    pub fn tasks_done(&self) -> usize {
        self.tasks_done
    }

    pub fn seen_classes(&self) -> &BTreeSet<ClassId> {
        self.params.classes()
    }

    /// Classes present in the most recent replay dataset.
    pub fn last_replay_classes(&self) -> &BTreeSet<ClassId> {
        &self.last_replay
    }

    /// Fits generators for the task's classes, extends the prompts and
    /// re-aligns every seen class on replayed features. The task's features
    /// are consumed.
    pub fn process_task(&mut self, task: LabeledFeatures) -> Result<TaskLog> {
        let index = self.tasks_done;
        let by_class = task.by_class();
        drop(task);
        if by_class.is_empty() {
            return Err(Error::InsufficientData(format!("task {} has no samples", index + 1)));
        }
        if let Some(c) = by_class.keys().find(|c| self.params.contains(**c)) {
            return Err(Error::Protocol(format!("class {c} was already seen in an earlier task")));
        }
        for &c in by_class.keys() {
            self.text.handcrafted(c)?;
        }
        let fit_seed = derive(self.config.seed, index as u64);
        let generator = self.config.generator;
        let fitted = by_class
            .into_par_iter()
            .map(|(c, f)| fit_generator(&f, &generator, fit_seed, c).map(|g| (c, g)))
            .collect::<Result<Vec<_>>>()?;
        let classes: Vec<ClassId> = fitted.iter().map(|(c, _)| *c).collect();
        for (c, g) in fitted {
            self.store.insert(c, g)?;
        }
        self.params.extend(&classes)?;

        let align = self.config.align;
        let replay_seed = derive(self.config.seed, stream::GENERATOR_SAMPLE | index as u64);
        let mut aligner = Aligner::new(&self.params, &align)?;
        let mut log = AlignLog::default();
        let mut ds = build_synthetic_dataset(&self.store, align.per_class, replay_seed)?;
        self.last_replay = ds.classes();
        for epoch in 0..align.epochs {
            if align.regenerate_per_epoch && epoch > 0 {
                ds = build_synthetic_dataset(&self.store, align.per_class, derive(replay_seed, epoch as u64))?;
            }
            aligner.epoch(&ds.data, &mut self.params, &self.text, replay_seed, epoch, &mut log)?;
        }
        self.tasks_done += 1;
        Ok(TaskLog {
            task: index + 1,
            classes,
            train_size: ds.len(),
            align: log,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generative::{GaussianModel, GeneratorEntry, GeneratorKind};
    use nalgebra::{DMatrix, DVector};

    fn store(classes: &[ClassId]) -> GeneratorStore {
        let mut s = GeneratorStore::new(GeneratorKind::Gaussian, 2);
        for &c in classes {
            let g = GaussianModel::from_mean_covariance(DVector::from_vec(vec![f64::from(c), 0.0]), DMatrix::identity(2, 2))
                .unwrap();
            s.insert(c, GeneratorEntry::Gaussian(g)).unwrap();
        }
        s
    }

    #[test]
    fn dataset_counts_and_determinism() {
        let s = store(&[0, 3, 5]);
        let ds = build_synthetic_dataset(&s, 100, 9).unwrap();
        assert_eq!(ds.len(), 300);
        for c in [0, 3, 5] {
            assert_eq!(ds.data.labels.iter().filter(|&&l| l == c).count(), 100);
        }
        assert_eq!(ds, build_synthetic_dataset(&s, 100, 9).unwrap());
        assert_ne!(ds, build_synthetic_dataset(&s, 100, 10).unwrap());
        // shuffled, not grouped by class
        assert!(ds.data.labels[..100].iter().any(|&l| l != ds.data.labels[0]));
    }

    #[test]
    fn empty_store_is_a_state_error() {
        assert!(matches!(
            build_synthetic_dataset(&store(&[]), 10, 0),
            Err(Error::State(_))
        ));
    }
}
