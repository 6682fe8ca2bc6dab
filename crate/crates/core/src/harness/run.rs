use std::collections::BTreeSet;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::benchmark::Benchmark;
use super::report::{matrix_rows, BenchmarkSummary, RunReport, WallTimes, REPORT_VERSION};
use crate::alignment::{align_prompts, AlignConfig, Engine, EngineConfig, TaskLog};
use crate::error::{Error, Result};
use crate::features::LabeledFeatures;
use crate::generative::{GeneratorConfig, GeneratorKind};
use crate::metrics::{ci_transfer, classify_batch, faa, record_accuracy, AccuracyMatrix, ClassEmbeddingBank};
use crate::rng::derive;
use crate::text::{FrozenTextTower, PromptConfig, PromptMode, PromptParams, TextEncoder, TowerConfig};
use crate::ClassId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Cgil,
    Joint,
    Finetune,
    Zeroshot,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Baseline {
    Joint,
    Finetune,
    Zeroshot,
}

impl std::str::FromStr for Baseline {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "joint" => Ok(Baseline::Joint),
            "finetune" => Ok(Baseline::Finetune),
            "zeroshot" => Ok(Baseline::Zeroshot),
            other => Err(Error::Spec(format!("unknown baseline {other:?}"))),
        }
    }
}

/// Which classes compete in the softmax when scoring task `i` after task `t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelSet {
    /// Every benchmark class.
    Full,
    /// Classes seen so far plus the classes of the evaluated task.
    Restricted,
}

/// Every hyperparameter of a run. Echoed verbatim into the report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub generator: GeneratorConfig,
    pub prompt: PromptConfig,
    pub align: AlignConfig,
    pub tower: TowerConfig,
    /// The tower is built from this seed, independent of the run seed.
    pub tower_seed: u64,
    pub label_set: LabelSet,
    /// Epochs over real features for the joint and fine-tune baselines.
    pub baseline_epochs: usize,
}

impl RunConfig {
    pub fn desk_scale(kind: GeneratorKind, mode: PromptMode) -> Self {
        RunConfig {
            generator: GeneratorConfig::desk_scale(kind),
            prompt: PromptConfig::with_mode(mode),
            align: AlignConfig::default(),
            tower: TowerConfig::default(),
            tower_seed: 0,
            label_set: LabelSet::Full,
            baseline_epochs: 20,
        }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig::desk_scale(GeneratorKind::Vae, PromptMode::ClassPlusGenerated)
    }
}

/// Frozen tower sized to the benchmark with every class name registered.
pub fn build_text_encoder(bench: &Benchmark, config: &RunConfig) -> Result<TextEncoder> {
    let tower_config = TowerConfig {
        d_txt: bench.spec.dim,
        ..config.tower
    };
    let mut text = TextEncoder::new(FrozenTextTower::new(tower_config, config.tower_seed)?);
    for (&c, name) in &bench.class_names {
        text.register_class(c, name)?;
    }
    Ok(text)
}

struct Evaluator<'a> {
    tasks: &'a [Vec<ClassId>],
    test: Vec<LabeledFeatures>,
    label_set: LabelSet,
    temperature: f64,
    matrix: AccuracyMatrix,
}

impl<'a> Evaluator<'a> {
    fn new(bench: &Benchmark, tasks: &'a [Vec<ClassId>], config: &RunConfig) -> Result<Self> {
        let test: Vec<LabeledFeatures> = tasks.iter().map(|t| bench.test_for(t)).collect();
        if let Some(i) = test.iter().position(LabeledFeatures::is_empty) {
            return Err(Error::InsufficientData(format!("task {} has no test samples", i + 1)));
        }
        Ok(Evaluator {
            tasks,
            test,
            label_set: config.label_set,
            temperature: config.align.temperature,
            matrix: AccuracyMatrix::new(tasks.len()),
        })
    }

    /// Fills row `t` from `bank`, with `seen` the classes trained so far.
    fn row(&mut self, t: usize, bank: &ClassEmbeddingBank, seen: &BTreeSet<ClassId>) -> Result<()> {
        for (i, data) in self.test.iter().enumerate() {
            let preds = match self.label_set {
                LabelSet::Full => classify_batch(&data.features, bank, self.temperature)?,
                LabelSet::Restricted => {
                    let mut keep = seen.clone();
                    keep.extend(self.tasks[i].iter().copied());
                    classify_batch(&data.features, &bank.restricted(&keep), self.temperature)?
                }
            };
            record_accuracy(&mut self.matrix, t, i, &preds, &data.labels)?;
        }
        Ok(())
    }
}

fn finish(
    bench: &Benchmark,
    method: Method,
    config: &RunConfig,
    seed: u64,
    tasks: Vec<Vec<ClassId>>,
    matrix: AccuracyMatrix,
    logs: Vec<TaskLog>,
    wall: WallTimes,
) -> Result<RunReport> {
    let ci = match ci_transfer(&matrix) {
        Ok(v) => Some(v),
        Err(Error::UndefinedMetric(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(RunReport {
        format_version: REPORT_VERSION,
        method,
        seed,
        config: *config,
        benchmark: BenchmarkSummary {
            classes: bench.spec.classes,
            tasks: bench.spec.tasks,
            dim: bench.spec.dim,
            train_count: bench.train.len(),
            test_count: bench.test.len(),
            fingerprint: bench.fingerprint(),
        },
        task_classes: tasks,
        faa: Some(faa(&matrix)?),
        ci_transfer: ci,
        matrix: Some(matrix_rows(&matrix)),
        tasks: logs,
        wall_times: wall,
    })
}

/// CGIL over the benchmark's task stream: after every task, all tasks'
/// test sets are scored with learned prompts for seen classes and
/// handcrafted prompts for the rest.
pub fn run_experiment(bench: &Benchmark, config: &RunConfig, seed: u64) -> Result<RunReport> {
    let start = Instant::now();
    let tasks = bench.task_order(seed)?;
    let text = build_text_encoder(bench, config)?;
    let engine_config = EngineConfig {
        generator: config.generator,
        prompt: config.prompt,
        align: config.align,
        seed,
    };
    let mut engine = Engine::new(engine_config, text, bench.spec.dim)?;
    let mut eval = Evaluator::new(bench, &tasks, config)?;
    let mut logs = Vec::with_capacity(tasks.len());
    let mut wall = WallTimes::default();
    for (t, classes) in tasks.iter().enumerate() {
        let task_start = Instant::now();
        let log = engine
            .process_task(bench.train_for(classes))
            .map_err(|e| e.in_task(t + 1))?;
        logs.push(log);
        let bank = ClassEmbeddingBank::hybrid(engine.text(), engine.params()).map_err(|e| e.in_task(t + 1))?;
        eval.row(t, &bank, engine.seen_classes()).map_err(|e| e.in_task(t + 1))?;
        wall.task_seconds.push(task_start.elapsed().as_secs_f64());
    }
    wall.total_seconds = start.elapsed().as_secs_f64();
    let matrix = eval.matrix;
    finish(bench, Method::Cgil, config, seed, tasks, matrix, logs, wall)
}

/// Context-only prompts trained on real features.
fn coop_params(config: &RunConfig, text: &TextEncoder, seed: u64) -> Result<PromptParams> {
    let prompt = PromptConfig {
        mode: PromptMode::ClassOnly,
        ..config.prompt
    };
    PromptParams::new(prompt, text.tower.d_tok(), text.tower.d_txt(), seed)
}

pub fn run_baseline(bench: &Benchmark, kind: Baseline, config: &RunConfig, seed: u64) -> Result<RunReport> {
    let start = Instant::now();
    let tasks = bench.task_order(seed)?;
    let text = build_text_encoder(bench, config)?;
    let mut eval = Evaluator::new(bench, &tasks, config)?;
    let mut logs = Vec::new();
    let mut wall = WallTimes::default();
    let align = AlignConfig {
        epochs: config.baseline_epochs,
        ..config.align
    };
    let method = match kind {
        Baseline::Zeroshot => {
            let bank = ClassEmbeddingBank::handcrafted(&text)?;
            for t in 0..tasks.len() {
                let task_start = Instant::now();
                eval.row(t, &bank, &BTreeSet::new()).map_err(|e| e.in_task(t + 1))?;
                wall.task_seconds.push(task_start.elapsed().as_secs_f64());
            }
            Method::Zeroshot
        }
        Baseline::Joint => {
            let mut params = coop_params(config, &text, seed)?;
            let all: Vec<ClassId> = bench.class_names.keys().copied().collect();
            params.extend(&all)?;
            let log = align_prompts(&bench.train, &mut params, &text, &align, derive(seed, 0))?;
            logs.push(TaskLog {
                task: 1,
                classes: all,
                train_size: bench.train.len(),
                align: log,
            });
            let bank = ClassEmbeddingBank::hybrid(&text, &params)?;
            for t in 0..tasks.len() {
                eval.row(t, &bank, params.classes())?;
            }
            wall.task_seconds.push(start.elapsed().as_secs_f64());
            Method::Joint
        }
        Baseline::Finetune => {
            let mut params = coop_params(config, &text, seed)?;
            for (t, classes) in tasks.iter().enumerate() {
                let task_start = Instant::now();
                let step = |params: &mut PromptParams| -> Result<TaskLog> {
                    params.extend(classes)?;
                    let data = bench.train_for(classes);
                    let log = align_prompts(&data, params, &text, &align, derive(seed, t as u64))?;
                    for &c in classes {
                        params.freeze_class(c);
                    }
                    Ok(TaskLog {
                        task: t + 1,
                        classes: classes.clone(),
                        train_size: data.len(),
                        align: log,
                    })
                };
                logs.push(step(&mut params).map_err(|e| e.in_task(t + 1))?);
                let bank = ClassEmbeddingBank::hybrid(&text, &params).map_err(|e| e.in_task(t + 1))?;
                eval.row(t, &bank, params.classes()).map_err(|e| e.in_task(t + 1))?;
                wall.task_seconds.push(task_start.elapsed().as_secs_f64());
            }
            Method::Finetune
        }
    };
    wall.total_seconds = start.elapsed().as_secs_f64();
    let matrix = eval.matrix;
    finish(bench, method, config, seed, tasks, matrix, logs, wall)
}
