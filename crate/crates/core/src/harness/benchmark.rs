use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::features::LabeledFeatures;
use crate::formats::embedding::{encode_records, load_embedding_file, write_embedding_file, EmbeddingManifest, MANIFEST_VERSION};
use crate::formats::write_atomic;
use crate::rng::{normal_vec, seeded, standard_normal, stream};
use crate::ClassId;

pub const BENCHMARK_FILE: &str = "benchmark.json";
pub const TRAIN_FILE: &str = "train.cgil";
pub const TEST_FILE: &str = "test.cgil";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BenchmarkSource {
    /// Gaussian clusters around unit-norm random means with per-coordinate
    /// standard deviation `1 / separation`.
    Synthetic { separation: f64, seed: u64 },
    Ingested { train: String, test: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSpec {
    pub classes: usize,
    pub tasks: usize,
    pub dim: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub source: BenchmarkSource,
}

impl BenchmarkSpec {
    /// `classes` over `tasks` with the default 200/100 split per class.
    pub fn synthetic(classes: usize, tasks: usize, dim: usize, separation: f64, seed: u64) -> Self {
        BenchmarkSpec {
            classes,
            tasks,
            dim,
            train_per_class: 200,
            test_per_class: 100,
            source: BenchmarkSource::Synthetic { separation, seed },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.tasks == 0 || self.tasks > self.classes {
            return Err(Error::Spec(format!(
                "cannot split {} classes into {} tasks",
                self.classes, self.tasks
            )));
        }
        if self.dim == 0 || self.train_per_class < 2 || self.test_per_class == 0 {
            return Err(Error::Spec(
                "dimension and test count must be positive and each class needs at least 2 training samples".into(),
            ));
        }
        if let BenchmarkSource::Synthetic { separation, .. } = self.source {
            if !(separation > 0.0) {
                return Err(Error::Spec(format!("separation must be positive, got {separation}")));
            }
        }
        Ok(())
    }

    /// Class counts per task: as even as possible, larger tasks first.
    pub fn task_sizes(&self) -> Vec<usize> {
        let (base, extra) = (self.classes / self.tasks, self.classes % self.tasks);
        (0..self.tasks).map(|t| base + usize::from(t < extra)).collect()
    }
}

/// Checks that `tasks` partitions `classes`: disjoint, non-empty, covering.
pub fn validate_partition(tasks: &[Vec<ClassId>], classes: &BTreeSet<ClassId>) -> Result<()> {
    let mut seen = BTreeSet::new();
    for (t, task) in tasks.iter().enumerate() {
        if task.is_empty() {
            return Err(Error::Spec(format!("task {} has no classes", t + 1)));
        }
        for c in task {
            if !classes.contains(c) {
                return Err(Error::Spec(format!("task {} names unknown class {c}", t + 1)));
            }
            if !seen.insert(*c) {
                return Err(Error::Spec(format!("class {c} appears in more than one task")));
            }
        }
    }
    if seen.len() != classes.len() {
        return Err(Error::Spec(format!(
            "tasks cover {} of {} classes",
            seen.len(),
            classes.len()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Benchmark {
    pub spec: BenchmarkSpec,
    pub class_names: BTreeMap<ClassId, String>,
    pub train: LabeledFeatures,
    pub test: LabeledFeatures,
}

#[derive(Debug, Serialize, Deserialize)]
struct BenchmarkFile {
    format_version: u32,
    spec: BenchmarkSpec,
    class_names: BTreeMap<ClassId, String>,
}

impl Benchmark {
    pub fn class_ids(&self) -> BTreeSet<ClassId> {
        self.class_names.keys().copied().collect()
    }

    /// Class order shuffled by `seed`, cut into tasks of [`BenchmarkSpec::task_sizes`].
    pub fn task_order(&self, seed: u64) -> Result<Vec<Vec<ClassId>>> {
        let mut ids: Vec<ClassId> = self.class_names.keys().copied().collect();
        ids.shuffle(&mut seeded(seed, stream::TASK_ORDER));
        let mut tasks = Vec::with_capacity(self.spec.tasks);
        let mut rest = ids.as_slice();
        for size in self.spec.task_sizes() {
            let (head, tail) = rest.split_at(size);
            let mut task = head.to_vec();
            task.sort_unstable();
            tasks.push(task);
            rest = tail;
        }
        validate_partition(&tasks, &self.class_ids())?;
        Ok(tasks)
    }

    pub fn train_for(&self, classes: &[ClassId]) -> LabeledFeatures {
        let keep: BTreeSet<ClassId> = classes.iter().copied().collect();
        self.train.filter_classes(|c| keep.contains(&c))
    }

    pub fn test_for(&self, classes: &[ClassId]) -> LabeledFeatures {
        let keep: BTreeSet<ClassId> = classes.iter().copied().collect();
        self.test.filter_classes(|c| keep.contains(&c))
    }

    /// SHA-256 over both splits as they are encoded on disk.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(encode_records(&self.train));
        h.update(encode_records(&self.test));
        hex(&h.finalize())
    }

    fn manifest(&self, split: &str, data: &LabeledFeatures) -> EmbeddingManifest {
        let mut parameters = BTreeMap::new();
        parameters.insert("split".to_string(), serde_json::json!(split));
        if let BenchmarkSource::Synthetic { separation, seed } = self.spec.source {
            parameters.insert("separation".to_string(), serde_json::json!(separation));
            parameters.insert("seed".to_string(), serde_json::json!(seed));
        }
        EmbeddingManifest {
            format_version: MANIFEST_VERSION,
            dim: self.spec.dim,
            count: data.len(),
            classes: self.class_names.clone(),
            source: match &self.spec.source {
                BenchmarkSource::Synthetic { .. } => "synthetic gaussian clusters".into(),
                BenchmarkSource::Ingested { .. } => "ingested embeddings".into(),
            },
            parameters,
        }
    }

    /// Writes both splits, their manifests and `benchmark.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_embedding_file(&dir.join(TRAIN_FILE), &self.train, &self.manifest("train", &self.train))?;
        write_embedding_file(&dir.join(TEST_FILE), &self.test, &self.manifest("test", &self.test))?;
        let file = BenchmarkFile {
            format_version: MANIFEST_VERSION,
            spec: self.spec.clone(),
            class_names: self.class_names.clone(),
        };
        let mut text = serde_json::to_string_pretty(&file)?;
        text.push('\n');
        write_atomic(&dir.join(BENCHMARK_FILE), text.as_bytes())
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn synthetic_class_name(class_id: ClassId) -> String {
    format!("class {class_id}")
}

/// Builds a synthetic benchmark in memory.
pub fn synthesize(spec: &BenchmarkSpec) -> Result<Benchmark> {
    spec.validate()?;
    let BenchmarkSource::Synthetic { separation, seed } = spec.source else {
        return Err(Error::Spec("only synthetic benchmarks can be generated".into()));
    };
    let mut rng = seeded(seed, stream::BENCHMARK);
    let d = spec.dim;
    let spread = 1.0 / separation;
    let mut train = LabeledFeatures::empty(d);
    let mut test = LabeledFeatures::empty(d);
    let mut class_names = BTreeMap::new();
    for c in 0..spec.classes as ClassId {
        let mut mean = normal_vec(&mut rng, d, 1.0);
        let norm = mean.iter().map(|v| v * v).sum::<f64>().sqrt();
        mean.iter_mut().for_each(|v| *v /= norm);
        let mut draw = |n: usize, out: &mut LabeledFeatures| -> Result<()> {
            for _ in 0..n {
                // stored as f32 on disk; round here so in-memory and loaded data agree
                let x: Vec<f64> = mean
                    .iter()
                    .map(|m| (m + spread * standard_normal(&mut rng)) as f32 as f64)
                    .collect();
                out.push(c, &x)?;
            }
            Ok(())
        };
        draw(spec.train_per_class, &mut train)?;
        draw(spec.test_per_class, &mut test)?;
        class_names.insert(c, synthetic_class_name(c));
    }
    Ok(Benchmark {
        spec: spec.clone(),
        class_names,
        train,
        test,
    })
}

/// Generates a synthetic benchmark and writes it to `dir`.
pub fn gen_synthetic_benchmark(spec: &BenchmarkSpec, dir: &Path) -> Result<Benchmark> {
    let bench = synthesize(spec)?;
    bench.write(dir)?;
    Ok(bench)
}

/// Loads a benchmark directory written by [`Benchmark::write`].
pub fn load_benchmark(dir: &Path) -> Result<Benchmark> {
    let path = dir.join(BENCHMARK_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let file: BenchmarkFile = serde_json::from_str(&text)?;
    file.spec.validate()?;
    let train = load_embedding_file(&dir.join(TRAIN_FILE))?;
    let test = load_embedding_file(&dir.join(TEST_FILE))?;
    for (name, set) in [("train", &train), ("test", &test)] {
        if set.data.dim() != file.spec.dim {
            return Err(Error::ManifestMismatch(format!(
                "{name} split has dimension {}, benchmark declares {}",
                set.data.dim(),
                file.spec.dim
            )));
        }
        if let Some(c) = set.data.labels.iter().find(|c| !file.class_names.contains_key(c)) {
            return Err(Error::ManifestMismatch(format!("{name} split uses undeclared class {c}")));
        }
    }
    if file.class_names.len() != file.spec.classes {
        return Err(Error::ManifestMismatch(format!(
            "benchmark names {} classes but declares {}",
            file.class_names.len(),
            file.spec.classes
        )));
    }
    Ok(Benchmark {
        spec: file.spec,
        class_names: file.class_names,
        train: train.data,
        test: test.data,
    })
}

/// Builds a benchmark from two existing embedding files, splitting their
/// classes into `tasks` tasks.
pub fn ingest_benchmark(train_path: &Path, test_path: &Path, tasks: usize) -> Result<Benchmark> {
    let train = load_embedding_file(train_path)?;
    let test = load_embedding_file(test_path)?;
    if train.data.dim() != test.data.dim() {
        return Err(Error::ManifestMismatch(format!(
            "train dimension {} differs from test dimension {}",
            train.data.dim(),
            test.data.dim()
        )));
    }
    let mut class_names = train.manifest.classes.clone();
    class_names.extend(test.manifest.classes.clone());
    let count = |d: &LabeledFeatures| d.len() / class_names.len().max(1);
    let spec = BenchmarkSpec {
        classes: class_names.len(),
        tasks,
        dim: train.data.dim(),
        train_per_class: count(&train.data).max(2),
        test_per_class: count(&test.data).max(1),
        source: BenchmarkSource::Ingested {
            train: train_path.display().to_string(),
            test: test_path.display().to_string(),
        },
    };
    spec.validate()?;
    Ok(Benchmark {
        spec,
        class_names,
        train: train.data,
        test: test.data,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ten_classes_five_tasks() {
        let spec = BenchmarkSpec {
            train_per_class: 4,
            test_per_class: 2,
            ..BenchmarkSpec::synthetic(10, 5, 8, 10.0, 1)
        };
        let b = synthesize(&spec).unwrap();
        let tasks = b.task_order(1992).unwrap();
        assert_eq!(tasks.len(), 5);
        assert!(tasks.iter().all(|t| t.len() == 2));
        let all: BTreeSet<ClassId> = tasks.iter().flatten().copied().collect();
        assert_eq!(all.len(), 10);
        assert_ne!(tasks, b.task_order(1996).unwrap());
        assert_eq!(b.train.len(), 40);
        assert_eq!(b.test.len(), 20);
    }

    #[test]
    fn uneven_split_and_bad_specs() {
        let spec = BenchmarkSpec::synthetic(7, 3, 4, 10.0, 1);
        assert_eq!(spec.task_sizes(), vec![3, 2, 2]);
        assert!(BenchmarkSpec::synthetic(3, 4, 4, 10.0, 1).validate().is_err());
        assert!(BenchmarkSpec::synthetic(3, 0, 4, 10.0, 1).validate().is_err());
        assert!(BenchmarkSpec::synthetic(3, 1, 4, 0.0, 1).validate().is_err());
    }

    #[test]
    fn partition_rules() {
        let classes: BTreeSet<ClassId> = (0..4).collect();
        assert!(validate_partition(&[vec![0, 1], vec![2, 3]], &classes).is_ok());
        assert!(matches!(
            validate_partition(&[vec![0, 1], vec![1, 2, 3]], &classes),
            Err(Error::Spec(_))
        ));
        assert!(validate_partition(&[vec![0, 1], vec![2]], &classes).is_err());
        assert!(validate_partition(&[vec![0, 1, 2, 3], vec![]], &classes).is_err());
        assert!(validate_partition(&[vec![0, 1, 2, 9]], &classes).is_err());
    }
}
