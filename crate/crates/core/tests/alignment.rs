mod common;

use std::collections::BTreeSet;

use cgil_core::alignment::*;
use cgil_core::features::LabeledFeatures;
use cgil_core::generative::{GeneratorConfig, GeneratorKind, GeneratorStore, fit_generator};
use cgil_core::text::{FrozenTextTower, PromptConfig, PromptMode, PromptParams, TextEncoder, TowerConfig};
use cgil_core::{ClassId, Error};
use common::labeled_clusters;

const D: usize = 16;

fn encoder(classes: &[ClassId]) -> TextEncoder {
    let config = TowerConfig {
        d_tok: D,
        d_txt: D,
        ..TowerConfig::default()
    };
    let mut text = TextEncoder::new(FrozenTextTower::new(config, 0).unwrap());
    for &c in classes {
        text.register_class(c, &format!("class {c}")).unwrap();
    }
    text
}

fn engine(kind: GeneratorKind, classes: &[ClassId], per_class: usize) -> Engine {
    let config = EngineConfig {
        generator: GeneratorConfig::desk_scale(kind),
        prompt: PromptConfig::with_mode(PromptMode::ClassPlusGenerated),
        align: AlignConfig {
            per_class,
            ..AlignConfig::default()
        },
        seed: 1992,
    };
    Engine::new(config, encoder(classes), D).unwrap()
}

fn task(data: &LabeledFeatures, classes: &[ClassId]) -> LabeledFeatures {
    data.filter_classes(|c| classes.contains(&c))
}

#[test]
fn alignment_separates_six_clusters() {
    let classes: Vec<ClassId> = (0..6).collect();
    let data = labeled_clusters(&classes, D, 300, 0.1, 3);
    let text = encoder(&classes);
    let mut params = PromptParams::new(PromptConfig::with_mode(PromptMode::ClassPlusGenerated), D, D, 1).unwrap();
    params.extend(&classes).unwrap();
    let config = AlignConfig {
        epochs: 4,
        ..AlignConfig::default()
    };
    let log = align_prompts(&data, &mut params, &text, &config, 5).unwrap();
    assert_eq!(log.epoch_loss.len(), 4);
    assert!(log.epoch_loss.last().unwrap() < log.epoch_loss.first().unwrap());
    assert!(*log.epoch_accuracy.last().unwrap() > 0.95, "{log:?}");
}

#[test]
fn synthetic_dataset_has_requested_counts_per_class() {
    let data = labeled_clusters(&[0, 1, 2], D, 50, 0.1, 4);
    let mut store = GeneratorStore::new(GeneratorKind::Gaussian, D);
    for (c, f) in data.by_class() {
        store.insert(c, fit_generator(&f, &GeneratorConfig::new(GeneratorKind::Gaussian), 1, c).unwrap()).unwrap();
    }
    let ds = build_synthetic_dataset(&store, 37, 9).unwrap();
    assert_eq!(ds.len(), 111);
    for c in 0..3 {
        assert_eq!(ds.data.labels.iter().filter(|&&l| l == c).count(), 37);
    }
    assert_eq!(ds.classes(), BTreeSet::from([0, 1, 2]));
    let empty = GeneratorStore::new(GeneratorKind::Gaussian, D);
    assert!(matches!(build_synthetic_dataset(&empty, 5, 0), Err(Error::State(_))));
}

#[test]
fn process_task_grows_store_and_keeps_tower_fixed() {
    let classes: Vec<ClassId> = (0..4).collect();
    let data = labeled_clusters(&classes, D, 60, 0.1, 5);
    let mut engine = engine(GeneratorKind::Gaussian, &classes, 200);
    let tower = engine.text().tower.checksum();

    let log1 = engine.process_task(task(&data, &[0, 1])).unwrap();
    assert_eq!(log1.task, 1);
    assert_eq!(log1.train_size, 400);
    assert_eq!(engine.store().len(), 2);
    let ctx0 = engine.params().context(0).unwrap().clone();

    let log2 = engine.process_task(task(&data, &[2, 3])).unwrap();
    assert_eq!(log2.task, 2);
    assert_eq!(log2.train_size, 800);
    assert_eq!(engine.store().len(), 4);
    assert_eq!(engine.last_replay_classes(), &BTreeSet::from([0, 1, 2, 3]));
    // earlier contexts keep training on replayed features
    assert_ne!(engine.params().context(0).unwrap().data(), ctx0.data());
    assert_eq!(engine.text().tower.checksum(), tower);
    assert_eq!(engine.tasks_done(), 2);
}

#[test]
fn overlapping_task_is_a_protocol_error() {
    let data = labeled_clusters(&[0, 1, 2], D, 30, 0.1, 6);
    let mut engine = engine(GeneratorKind::Gaussian, &[0, 1, 2], 50);
    engine.process_task(task(&data, &[0, 1])).unwrap();
    let store = engine.store().len();
    assert!(matches!(engine.process_task(task(&data, &[1, 2])), Err(Error::Protocol(_))));
    assert_eq!(engine.store().len(), store);
    assert_eq!(engine.tasks_done(), 1);
}

#[test]
fn unregistered_class_is_rejected() {
    let data = labeled_clusters(&[0, 9], D, 30, 0.1, 7);
    let mut engine = engine(GeneratorKind::Gaussian, &[0], 50);
    assert!(matches!(engine.process_task(data), Err(Error::Lookup(_))));
}

#[test]
fn engine_dimension_must_match_tower() {
    let config = EngineConfig {
        generator: GeneratorConfig::new(GeneratorKind::Gaussian),
        prompt: PromptConfig::default(),
        align: AlignConfig::default(),
        seed: 0,
    };
    assert!(matches!(Engine::new(config, encoder(&[0]), D + 1), Err(Error::Spec(_))));
}

#[test]
fn invalid_align_config_is_rejected() {
    let bad = AlignConfig {
        batch_size: 0,
        ..AlignConfig::default()
    };
    assert!(bad.validate().is_err());
    let bad = AlignConfig {
        temperature: 0.0,
        ..AlignConfig::default()
    };
    assert!(bad.validate().is_err());
}
