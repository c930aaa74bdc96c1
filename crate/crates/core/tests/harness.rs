mod common;

use cxrnet::arch::{Architecture, LayerKind, LayerParams};
use cxrnet::augment::AugmentationPolicy;
use cxrnet::dataset::Split;
use cxrnet::harness::{
    evaluate, evaluate_with, train, train_prepared, Checkpoint, PreparedData, RunConfig, RunRecord, RunStatus,
};
use cxrnet::Error;

use common::synthetic_config;

fn tiny(dir: &std::path::Path, arch: Architecture) -> RunConfig {
    let mut c = synthetic_config(dir, arch, 10, 32, 1.0 / 32.0, 2);
    c.hyperparameters.batch_size = 8;
    c
}

#[test]
fn record_files_and_reevaluation_agree() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = tiny(dir.path(), Architecture::Resnet50);
    config.output_dir = Some(dir.path().join("run"));
    let out = train(&config).unwrap();
    let record = &out.record;
    assert!(record.is_completed());
    assert_eq!(record.epochs.len(), 2);
    assert!(record.epochs.iter().all(|e| e.train_samples == 18 && e.val_accuracy.is_some()));
    assert_eq!(record.content_hash, record.compute_hash());

    let run = dir.path().join("run");
    for f in ["config.json", "record.json", "checkpoint.json", "report.txt"] {
        assert!(run.join(f).exists(), "{f}");
    }
    // report metrics are written with four decimals; everything else round-trips
    let loaded = RunRecord::load(&run.join("record.json")).unwrap();
    assert_eq!(loaded.content_hash, record.content_hash);
    assert_eq!(loaded.compute_hash(), record.content_hash);
    assert_eq!(loaded.epochs, record.epochs);
    assert_eq!(loaded.weights_hash, record.weights_hash);
    assert_eq!(loaded.test.as_ref().unwrap().confusion, record.test.as_ref().unwrap().confusion);
    assert_eq!(RunConfig::load(&run.join("config.json")).unwrap(), config);

    let checkpoint = Checkpoint::load(&run.join("checkpoint.json")).unwrap();
    assert_eq!(checkpoint, out.checkpoint);
    let eval = evaluate(&checkpoint, Split::Test).unwrap();
    let test = record.test.as_ref().unwrap();
    assert_eq!(eval.confusion, test.confusion);
    assert_eq!(eval.report, test.report);
    assert!((eval.loss - test.loss).abs() < 1e-9);
    assert_eq!(eval.confusion.total(), 6);
}

#[test]
fn augmentation_never_reaches_the_test_split() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = tiny(dir.path(), Architecture::ModifiedVgg16);
    config.augmentation = AugmentationPolicy::all();
    let data = PreparedData::load(&config).unwrap();
    let (n_train, n_val) = (data.train.len() as u64, data.validation.len() as u64);
    let out = train_prepared(&config, &data).unwrap();
    let calls = out.record.augment_calls;
    assert_eq!((calls.train, calls.validation, calls.test), (2 * n_train, 2 * n_val, 0));

    config.augment_validation = false;
    let calls = train_prepared(&config, &data).unwrap().record.augment_calls;
    assert_eq!((calls.train, calls.validation, calls.test), (2 * n_train, 0, 0));

    config.augmentation = AugmentationPolicy::none();
    let calls = train_prepared(&config, &data).unwrap().record.augment_calls;
    assert_eq!((calls.train, calls.validation, calls.test), (0, 0, 0));
}

#[test]
fn constant_prediction_scores_one_third() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny(dir.path(), Architecture::ModifiedVgg16);
    let data = PreparedData::load(&config).unwrap();
    let mut checkpoint = train_prepared(&config, &data).unwrap().checkpoint;
    let head = checkpoint
        .spec
        .nodes()
        .iter()
        .position(|n| matches!(n.kind, LayerKind::Dense { .. }))
        .unwrap();
    let Some(LayerParams::Dense(p)) = &mut checkpoint.params.layers_mut()[head] else {
        panic!("dense head");
    };
    p.weights.data_mut().iter_mut().for_each(|w| *w = 0.0);
    p.bias.as_mut().unwrap().data_mut().copy_from_slice(&[0.0, 2.0, 0.0]);
    let eval = evaluate_with(&checkpoint.spec, &checkpoint.params, &data.manifest.class_names, &data.test, Split::Test, 4)
        .unwrap();
    assert!((eval.report.accuracy - 1.0 / 3.0).abs() < 1e-12);
    let normal = &eval.report.classes[1];
    assert_eq!((normal.recall, normal.precision), (1.0, 1.0 / 3.0));
    assert!(eval.report.classes[0].zero_division && eval.report.classes[2].zero_division);
    assert_eq!(eval.report.classes[0].precision, 0.0);
}

#[test]
fn mismatched_checkpoint_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny(dir.path(), Architecture::ModifiedVgg16);
    let checkpoint = train(&config).unwrap().checkpoint;

    let mut other_arch = checkpoint.clone();
    other_arch.config.architecture = Architecture::Resnet50;
    assert!(matches!(evaluate(&other_arch, Split::Test), Err(Error::Checkpoint(_))));

    let mut other_width = checkpoint.clone();
    other_width.config.width_scale = 1.0 / 16.0;
    assert!(matches!(evaluate(&other_width, Split::Test), Err(Error::Checkpoint(_))));

    let mut bad_hash = checkpoint.clone();
    bad_hash.spec_hash = "0".repeat(64);
    assert!(matches!(evaluate(&bad_hash, Split::Test), Err(Error::Checkpoint(_))));

    let path = dir.path().join("garbage.json");
    std::fs::write(&path, "{").unwrap();
    assert!(matches!(Checkpoint::load(&path), Err(Error::Checkpoint(_))));
}

#[test]
fn divergence_is_recorded_as_failure() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = tiny(dir.path(), Architecture::ModifiedVgg16);
    config.hyperparameters.learning_rate = 1e30;
    config.hyperparameters.epochs = 3;
    let record = train(&config).unwrap().record;
    assert!(matches!(record.status, RunStatus::Failed { .. }), "{:?}", record.status);
    assert!(record.test.is_none());
    assert_eq!(record.test_accuracy(), None);
    assert_eq!(record.content_hash, record.compute_hash());
}

#[test]
fn hash_ignores_wall_time_and_output_dir_but_not_seed() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny(dir.path(), Architecture::ModifiedVgg16);
    let data = PreparedData::load(&config).unwrap();
    let a = train_prepared(&config, &data).unwrap().record;

    let mut elsewhere = config.clone();
    elsewhere.output_dir = Some(dir.path().join("elsewhere"));
    let b = train_prepared(&elsewhere, &data).unwrap().record;
    assert_eq!(a.content_hash, b.content_hash);
    assert_eq!(a.weights_hash, b.weights_hash);

    let mut reseeded = config.clone();
    reseeded.hyperparameters.seed += 1;
    let c = train_prepared(&reseeded, &data).unwrap().record;
    assert_ne!(a.content_hash, c.content_hash);
    assert_ne!(a.weights_hash, c.weights_hash);
}

#[test]
fn config_validation() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = tiny(dir.path(), Architecture::ModifiedVgg16);
    config.hyperparameters.batch_size = 1;
    assert!(train(&config).is_err());
    config.hyperparameters.batch_size = 8;
    config.hyperparameters.epochs = 0;
    assert!(train(&config).is_err());
    config.hyperparameters.epochs = 1;
    config.input_size = 48;
    assert!(train(&config).is_err());
}
