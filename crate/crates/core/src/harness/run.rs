use std::fs;
use std::path::Path;
use std::time::Instant;

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::RunConfig;
use crate::arch::{self, backward, forward, forward_pass, ModelSpec, ParamStore};
use crate::augment::{self, derive_seed, image_stream, AugmentationPolicy};
use crate::dataset::{load_image, one_hot, DatasetManifest, Split};
use crate::error::{Error, Result};
use crate::metrics::{classification_report, confusion_matrix, ClassificationReport, ConfusionMatrix};
use crate::optimizer::AdamState;
use crate::tensor::{softmax_cross_entropy, Mode, Tensor};

/// Decoded, resized images of one split with their class indices.
#[derive(Debug, Clone, Default)]
pub struct SplitData {
    pub images: Vec<Tensor<f32>>,
    pub labels: Vec<usize>,
}

impl SplitData {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn load(manifest: &DatasetManifest, split: Split, config: &RunConfig) -> Result<Self> {
        let mut out = Self::default();
        for r in manifest.records_in(split) {
            out.images.push(load_image(&r.path, config.input_size, config.channel_policy)?);
            out.labels.push(manifest.class_index(&r.label).ok_or_else(|| {
                Error::Dataset(format!("record {} has unknown class {:?}", r.path.display(), r.label))
            })?);
        }
        Ok(out)
    }
}

/// Everything a run reads from disk, loaded once so sweeps can share it.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub manifest: DatasetManifest,
    pub train: SplitData,
    pub validation: SplitData,
    pub test: SplitData,
}

impl PreparedData {
    pub fn load(config: &RunConfig) -> Result<Self> {
        let manifest = config.dataset.resolve()?;
        let train = SplitData::load(&manifest, Split::Train, config)?;
        if train.len() < 2 {
            return Err(Error::Dataset("the train split needs at least two records".into()));
        }
        Ok(Self {
            validation: SplitData::load(&manifest, Split::Validation, config)?,
            test: SplitData::load(&manifest, Split::Test, config)?,
            train,
            manifest,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.manifest.class_names.len()
    }
}

/// How many times the augmentation transform ran on each split.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentCounters {
    pub train: u64,
    pub validation: u64,
    pub test: u64,
}

impl AugmentCounters {
    fn bump(&mut self, split: Split) {
        match split {
            Split::Train => self.train += 1,
            Split::Validation => self.validation += 1,
            Split::Test => self.test += 1,
            Split::Unassigned => {}
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub train_samples: usize,
    pub val_loss: Option<f64>,
    pub val_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub loss: f64,
    pub confusion: ConfusionMatrix,
    pub report: ClassificationReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Failed { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: RunConfig,
    pub spec_hash: String,
    pub parameter_count: usize,
    pub trainable_parameter_count: usize,
    pub epochs: Vec<EpochMetrics>,
    pub test: Option<Evaluation>,
    pub status: RunStatus,
    pub augment_calls: AugmentCounters,
    /// sha256 of the final weights.
    pub weights_hash: String,
    pub wall_seconds: f64,
    /// sha256 over every field above except wall time and the output directory.
    pub content_hash: String,
}

impl RunRecord {
    pub fn compute_hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.wall_seconds = 0.0;
        canonical.content_hash.clear();
        canonical.config.output_dir = None;
        let json = serde_json::to_vec(&canonical).expect("record serializes");
        hex::encode(Sha256::digest(&json))
    }

    pub fn is_completed(&self) -> bool {
        self.status == RunStatus::Completed
    }

    pub fn test_accuracy(&self) -> Option<f64> {
        self.test.as_ref().map(|t| t.report.accuracy)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Final weights plus what is needed to rebuild and re-evaluate them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub manifest: DatasetManifest,
    pub spec: ModelSpec,
    pub spec_hash: String,
    pub params: ParamStore<f32>,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_vec(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_slice(&bytes).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
    }

    /// Rebuilds the architecture from the stored config and checks it against
    /// the embedded spec, its hash and the stored weights.
    pub fn verified_spec(&self) -> Result<ModelSpec> {
        let rebuilt = build_spec(&self.config, self.manifest.class_names.len())?;
        if rebuilt != self.spec || rebuilt.content_hash() != self.spec_hash {
            return Err(Error::Checkpoint(format!(
                "architecture mismatch: config builds {} but checkpoint holds spec {}",
                rebuilt.content_hash(),
                self.spec_hash
            )));
        }
        self.params
            .check(&rebuilt)
            .map_err(|e| Error::Checkpoint(format!("weights do not fit the architecture: {e}")))?;
        Ok(rebuilt)
    }
}

pub struct TrainOutput {
    pub record: RunRecord,
    pub checkpoint: Checkpoint,
}

pub fn build_spec(config: &RunConfig, num_classes: usize) -> Result<ModelSpec> {
    arch::build(config.architecture, config.input_shape(), num_classes, config.width_scale)
}

fn weights_hash(params: &ParamStore<f32>) -> String {
    let mut h = Sha256::new();
    for layer in params.layers().iter().flatten() {
        let json = serde_json::to_vec(layer).expect("parameters serialize");
        h.update(&json);
    }
    hex::encode(h.finalize())
}

/// Stacks the selected images (augmenting when a policy is given) into an NHWC batch.
#[allow(clippy::too_many_arguments)]
fn assemble(
    data: &SplitData,
    indices: &[usize],
    num_classes: usize,
    augmentation: Option<&AugmentationPolicy>,
    split: Split,
    seed: u64,
    epoch: u64,
    counters: &mut AugmentCounters,
) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let first = data.images[indices[0]].shape().to_vec();
    let mut pixels = Vec::with_capacity(indices.len() * data.images[indices[0]].len());
    for &i in indices {
        match augmentation {
            // the test split is never routed through the transform
            Some(policy) if split != Split::Test => {
                let mut rng = image_stream(seed, epoch, split.stream_id(), i as u64);
                let params = augment::sample_params(policy, &mut rng);
                counters.bump(split);
                pixels.extend_from_slice(augment::apply(&data.images[i], &params)?.data());
            }
            _ => pixels.extend_from_slice(data.images[i].data()),
        }
    }
    let mut shape = vec![indices.len()];
    shape.extend(first);
    let labels: Vec<usize> = indices.iter().map(|&i| data.labels[i]).collect();
    Ok((Tensor::new(shape, pixels)?, one_hot(&labels, num_classes)?))
}

fn argmax_rows(logits: &Tensor<f32>) -> Vec<usize> {
    let k = logits.shape()[1];
    logits
        .data()
        .chunks_exact(k)
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f32::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                .0
        })
        .collect()
}

/// Consecutive batches; a trailing batch of one sample is merged into the
/// previous one because train-mode batch normalization needs two.
pub fn batch_ranges(len: usize, batch_size: usize) -> Vec<std::ops::Range<usize>> {
    let mut out: Vec<std::ops::Range<usize>> = (0..len)
        .step_by(batch_size)
        .map(|s| s..(s + batch_size).min(len))
        .collect();
    if out.len() > 1 && out.last().is_some_and(|r| r.len() == 1) {
        let last = out.pop().expect("non-empty");
        out.last_mut().expect("non-empty").end = last.end;
    }
    out
}

/// Inference-mode loss and confusion matrix over a split.
#[allow(clippy::too_many_arguments)]
fn evaluate_data(
    spec: &ModelSpec,
    params: &ParamStore<f32>,
    data: &SplitData,
    class_names: &[String],
    batch_size: usize,
    augmentation: Option<&AugmentationPolicy>,
    split: Split,
    seed: u64,
    epoch: u64,
    counters: &mut AugmentCounters,
) -> Result<Evaluation> {
    if data.is_empty() {
        return Err(Error::Dataset(format!("the {split:?} split is empty")));
    }
    let k = class_names.len();
    let mut predictions = Vec::with_capacity(data.len());
    let mut loss_sum = 0.0;
    let order: Vec<usize> = (0..data.len()).collect();
    for chunk in order.chunks(batch_size) {
        let (x, y) = assemble(data, chunk, k, augmentation, split, seed, epoch, counters)?;
        let logits = forward(spec, params, &x, Mode::Inference)?;
        let (loss, _) = softmax_cross_entropy(&logits, &y)?;
        loss_sum += loss as f64 * chunk.len() as f64;
        predictions.extend(argmax_rows(&logits));
    }
    let confusion = confusion_matrix(&predictions, &data.labels, k)?.with_class_names(class_names.to_vec())?;
    Ok(Evaluation {
        loss: loss_sum / data.len() as f64,
        report: classification_report(&confusion)?,
        confusion,
    })
}

/// Loads the dataset and trains; see [`train_prepared`].
pub fn train(config: &RunConfig) -> Result<TrainOutput> {
    config.validate()?;
    let data = PreparedData::load(config)?;
    train_prepared(config, &data)
}

/// Seeded init, then `epochs` passes of shuffled mini-batch Adam with
/// on-the-fly augmentation; validation each epoch, test once at the end with
/// the last-epoch weights. A numeric fault ends the run with a failed record.
pub fn train_prepared(config: &RunConfig, data: &PreparedData) -> Result<TrainOutput> {
    config.validate()?;
    let started = Instant::now();
    let hyper = config.hyperparameters;
    let spec = build_spec(config, data.num_classes())?;
    let mut params: ParamStore<f32> = ParamStore::init(&spec, hyper.seed);
    let mut adam = AdamState::init(params.trainable(&spec).into_iter().map(|(_, t)| t), config.adam());
    let names = &data.manifest.class_names;
    let k = names.len();
    let policy = (!config.augmentation.is_identity()).then_some(&config.augmentation);
    let val_policy = if config.augment_validation { policy } else { None };
    let mut counters = AugmentCounters::default();
    let mut epochs = Vec::with_capacity(hyper.epochs);

    let outcome = (|| -> Result<Option<Evaluation>> {
        for epoch in 0..hyper.epochs {
            let mut order: Vec<usize> = (0..data.train.len()).collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(&[hyper.seed, epoch as u64])));
            let (mut loss_sum, mut correct, mut seen) = (0.0f64, 0usize, 0usize);
            for range in batch_ranges(order.len(), hyper.batch_size) {
                let idx = &order[range];
                let (x, y) = assemble(&data.train, idx, k, policy, Split::Train, hyper.seed, epoch as u64, &mut counters)?;
                let pass = forward_pass(&spec, &params, &x, Mode::Train)?;
                let logits = pass.logits();
                let (loss, grad) = softmax_cross_entropy(&logits, &y)?;
                if !loss.is_finite() {
                    return Err(Error::NumericFault(format!("training loss at epoch {}", epoch + 1)));
                }
                let grads = backward(&spec, &params, &pass, &grad)?;
                params.apply_batch_stats(&pass);
                drop(pass);
                let (names, tensors): (Vec<String>, Vec<Tensor<f32>>) = grads.params.into_iter().unzip();
                let mut slots = params.trainable_mut(&spec);
                debug_assert!(slots.iter().zip(&names).all(|((a, _), b)| a == b));
                adam.step(&mut slots, &tensors)?;

                loss_sum += loss as f64 * idx.len() as f64;
                seen += idx.len();
                correct += argmax_rows(&logits)
                    .iter()
                    .zip(idx)
                    .filter(|(p, &i)| **p == data.train.labels[i])
                    .count();
            }
            let val = if data.validation.is_empty() {
                None
            } else {
                Some(evaluate_data(
                    &spec,
                    &params,
                    &data.validation,
                    names,
                    hyper.batch_size,
                    val_policy,
                    Split::Validation,
                    hyper.seed,
                    epoch as u64,
                    &mut counters,
                )?)
            };
            let m = EpochMetrics {
                epoch: epoch + 1,
                train_loss: loss_sum / seen as f64,
                train_accuracy: correct as f64 / seen as f64,
                train_samples: seen,
                val_loss: val.as_ref().map(|v| v.loss),
                val_accuracy: val.as_ref().map(|v| v.report.accuracy),
            };
            info!(
                "{} epoch {}/{}: loss {:.4} acc {:.4} val_acc {}",
                config.architecture,
                m.epoch,
                hyper.epochs,
                m.train_loss,
                m.train_accuracy,
                m.val_accuracy.map_or("-".into(), |a| format!("{a:.4}"))
            );
            epochs.push(m);
        }
        if data.test.is_empty() {
            return Ok(None);
        }
        evaluate_data(&spec, &params, &data.test, names, hyper.batch_size, None, Split::Test, hyper.seed, 0, &mut counters)
            .map(Some)
    })();

    let (status, test) = match outcome {
        Ok(test) => (RunStatus::Completed, test),
        Err(Error::NumericFault(reason)) => {
            warn!("run failed: {reason}");
            (RunStatus::Failed { reason }, None)
        }
        Err(e) => return Err(e),
    };
    let mut record = RunRecord {
        config: config.clone(),
        spec_hash: spec.content_hash(),
        parameter_count: spec.count_parameters(),
        trainable_parameter_count: spec.count_trainable_parameters(),
        epochs,
        test,
        status,
        augment_calls: counters,
        weights_hash: weights_hash(&params),
        wall_seconds: started.elapsed().as_secs_f64(),
        content_hash: String::new(),
    };
    record.content_hash = record.compute_hash();
    let checkpoint = Checkpoint {
        config: config.clone(),
        manifest: data.manifest.clone(),
        spec_hash: spec.content_hash(),
        spec,
        params,
    };
    if let Some(dir) = &config.output_dir {
        persist(dir, &record, &checkpoint)?;
    }
    Ok(TrainOutput { record, checkpoint })
}

fn persist(dir: &Path, record: &RunRecord, checkpoint: &Checkpoint) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    fs::write(dir.join("config.json"), serde_json::to_string_pretty(&record.config)?)
        .map_err(|e| Error::io(dir.join("config.json"), e))?;
    record.save(&dir.join("record.json"))?;
    checkpoint.save(&dir.join("checkpoint.json"))?;
    if let Some(test) = &record.test {
        let text = format!("{}\n{}", test.report.to_table(), test.confusion.to_table());
        fs::write(dir.join("report.txt"), text).map_err(|e| Error::io(dir.join("report.txt"), e))?;
    }
    Ok(())
}

/// Re-evaluates a checkpoint on a split of its stored manifest, in inference
/// mode and without augmentation.
pub fn evaluate(checkpoint: &Checkpoint, split: Split) -> Result<Evaluation> {
    let spec = checkpoint.verified_spec()?;
    let data = SplitData::load(&checkpoint.manifest, split, &checkpoint.config)?;
    evaluate_with(&spec, &checkpoint.params, &checkpoint.manifest.class_names, &data, split, checkpoint.config.hyperparameters.batch_size)
}

/// Inference-mode evaluation of explicit weights on preloaded data.
pub fn evaluate_with(
    spec: &ModelSpec,
    params: &ParamStore<f32>,
    class_names: &[String],
    data: &SplitData,
    split: Split,
    batch_size: usize,
) -> Result<Evaluation> {
    let mut counters = AugmentCounters::default();
    evaluate_data(spec, params, data, class_names, batch_size.max(1), None, split, 0, 0, &mut counters)
}
