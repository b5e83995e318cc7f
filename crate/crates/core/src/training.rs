//! The training loop: Adam over binary cross-entropy, reduce-on-plateau
//! learning-rate schedule, per-epoch validation, and a history record per
//! epoch. All randomness (shuffling, augmentation) derives from the config
//! seed, so two runs with the same inputs produce identical histories.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cohort::{resolve_ref, CohortManifest, EfLabel, Split, SplitAssignment};
use crate::error::{Error, Result};
use crate::imaging::{apply_policy, load_and_normalize, to_nchw, AugmentationPolicy, Image};
use crate::models::Model;
use crate::nn::{bce_with_logits, Adam};
use crate::num::Scalar;
use crate::rng::RngStream;

/// Minimum decrease in validation loss that counts as improvement, both for
/// the plateau schedule and for best-epoch tracking.
pub const IMPROVEMENT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub initial_lr: f64,
    /// Multiplier applied to the learning rate on plateau.
    pub lr_factor: f64,
    /// Epochs without validation improvement before the rate drops.
    pub plateau_patience: usize,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub augmentation: AugmentationPolicy,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            initial_lr: 0.001,
            lr_factor: 0.1,
            plateau_patience: 5,
            max_epochs: 50,
            batch_size: 32,
            augmentation: AugmentationPolicy::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.initial_lr > 0.0 && self.initial_lr.is_finite()) {
            return Err(Error::Config(format!(
                "initial_lr must be positive, got {}",
                self.initial_lr
            )));
        }
        if !(self.lr_factor > 0.0 && self.lr_factor < 1.0) {
            return Err(Error::Config(format!(
                "lr_factor must lie in (0, 1), got {}",
                self.lr_factor
            )));
        }
        if self.plateau_patience == 0 {
            return Err(Error::Config("plateau_patience must be at least 1".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("max_epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        self.augmentation.validate()
    }
}

/// Reduce-on-plateau state. The rate drops by `factor` once `patience`
/// consecutive epochs fail to improve the best validation loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchedulerState {
    pub lr: f64,
    pub best_val_loss: f64,
    pub epochs_since_improvement: usize,
}

impl SchedulerState {
    pub fn new(initial_lr: f64) -> Self {
        Self {
            lr: initial_lr,
            best_val_loss: f64::INFINITY,
            epochs_since_improvement: 0,
        }
    }

    /// Feed one epoch's validation loss; returns true when the rate dropped.
    pub fn observe(&mut self, val_loss: f64, factor: f64, patience: usize) -> bool {
        if val_loss < self.best_val_loss - IMPROVEMENT_TOL {
            self.best_val_loss = val_loss;
            self.epochs_since_improvement = 0;
            return false;
        }
        self.epochs_since_improvement += 1;
        if self.epochs_since_improvement >= patience {
            self.lr *= factor;
            self.epochs_since_improvement = 0;
            return true;
        }
        false
    }
}

/// One labeled image ready for the training or evaluation loop.
#[derive(Debug, Clone)]
pub struct Sample<F: Scalar> {
    pub study_id: String,
    pub image: Image<F>,
    pub label: EfLabel,
}

pub fn label_target<F: Scalar>(label: EfLabel) -> F {
    match label {
        EfLabel::ReducedEF => F::one(),
        EfLabel::PreservedEF => F::zero(),
    }
}

/// Load every image of one split, normalized and resized for `model`'s
/// input contract. Order follows the manifest.
pub fn load_split_samples<F: Scalar>(
    manifest: &CohortManifest,
    assignment: &SplitAssignment,
    split: Split,
    image_root: &Path,
    input_size: (usize, usize),
    channels: usize,
) -> Result<Vec<Sample<F>>> {
    let mut samples = Vec::new();
    for record in manifest.records() {
        match assignment.assignment.get(&record.study_id) {
            Some(s) if *s == split => {}
            Some(_) => continue,
            None => return Err(Error::UnknownStudy(record.study_id.clone())),
        }
        let path = resolve_ref(image_root, &record.image_ref);
        let image = load_and_normalize(&path, input_size, channels)?;
        samples.push(Sample {
            study_id: record.study_id.clone(),
            image,
            label: record.label,
        });
    }
    Ok(samples)
}

/// One row of the training history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    /// Learning rate in effect during this epoch's updates.
    pub lr: f64,
}

pub struct TrainOutput {
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

/// Mean BCE loss and accuracy of `model` on `samples`, without
/// augmentation. Accuracy uses the p > 0.5 decision rule; a tie goes to
/// PreservedEF.
pub fn evaluate_samples<F: Scalar>(
    model: &Model<F>,
    samples: &[Sample<F>],
    batch_size: usize,
) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(Error::Invalid("cannot evaluate on an empty sample set".into()));
    }
    let mut loss_sum = 0.0;
    let mut correct = 0usize;
    for chunk in samples.chunks(batch_size) {
        let images: Vec<Image<F>> = chunk.iter().map(|s| s.image.clone()).collect();
        let batch = to_nchw(&images)?;
        let logits = model.forward_logits(&batch)?;
        let targets: Vec<F> = chunk.iter().map(|s| label_target(s.label)).collect();
        let logit_col = ndarray::Array2::from_shape_vec((logits.len(), 1), logits.clone())
            .expect("logit column");
        let (mean_loss, _) = bce_with_logits(&logit_col, &targets);
        loss_sum += mean_loss.as_f64() * chunk.len() as f64;
        for (z, s) in logits.iter().zip(chunk) {
            let p = crate::nn::sigmoid(z.as_f64());
            let predicted = if p > 0.5 {
                EfLabel::ReducedEF
            } else {
                EfLabel::PreservedEF
            };
            if predicted == s.label {
                correct += 1;
            }
        }
    }
    let n = samples.len() as f64;
    Ok((loss_sum / n, correct as f64 / n))
}

/// Augmentation stream for one study in one epoch. Keyed by study id (not
/// position), so the draw a study sees is independent of shuffle order.
fn augmentation_stream(seed: u64, study_id: &str, epoch: usize) -> RngStream {
    RngStream::derive_indexed(seed, &format!("augment:{study_id}"), epoch as u64)
}

/// Run the full training loop. `on_epoch` fires after every epoch with the
/// fresh record and whether this epoch set a new best validation loss;
/// checkpoint writing hangs off that hook.
pub fn train<F: Scalar>(
    model: &mut Model<F>,
    train_set: &[Sample<F>],
    val_set: &[Sample<F>],
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord, &Model<F>, bool) -> Result<()>,
) -> Result<TrainOutput> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::Invalid("training set is empty".into()));
    }
    if val_set.is_empty() {
        return Err(Error::Invalid("validation set is empty".into()));
    }

    model.set_train();
    let mut adam = Adam::new(&model.graph().params, config.initial_lr);
    let mut scheduler = SchedulerState::new(config.initial_lr);
    let mut history = Vec::with_capacity(config.max_epochs);
    let mut best_val_loss = f64::INFINITY;
    let mut best_epoch = 0usize;

    for epoch in 1..=config.max_epochs {
        let lr_in_effect = scheduler.lr;
        adam.lr = lr_in_effect;

        let mut order: Vec<usize> = (0..train_set.len()).collect();
        let mut shuffle_rng =
            RngStream::derive_indexed(config.seed, "epoch-shuffle", epoch as u64);
        shuffle_rng.shuffle(&mut order);

        let mut loss_sum = 0.0;
        for (batch_idx, chunk) in order.chunks(config.batch_size).enumerate() {
            let mut images = Vec::with_capacity(chunk.len());
            let mut targets: Vec<F> = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let s = &train_set[i];
                let image = if config.augmentation.is_enabled() {
                    let mut rng = augmentation_stream(config.seed, &s.study_id, epoch);
                    apply_policy(&s.image, &config.augmentation, &mut rng)?
                } else {
                    s.image.clone()
                };
                images.push(image);
                targets.push(label_target(s.label));
            }
            let batch = to_nchw(&images)?;
            let (loss, grads) = model.loss_and_gradients(&batch, &targets)?;
            let loss = loss.as_f64();
            if !loss.is_finite() {
                return Err(Error::TrainingAbort {
                    epoch,
                    batch: batch_idx,
                    reason: format!("non-finite training loss {loss}"),
                });
            }
            adam.step(&mut model.graph_mut().params, &grads);
            loss_sum += loss * chunk.len() as f64;
        }
        let train_loss = loss_sum / train_set.len() as f64;

        let (val_loss, val_acc) = evaluate_samples(model, val_set, config.batch_size)?;
        if !val_loss.is_finite() {
            return Err(Error::TrainingAbort {
                epoch,
                batch: 0,
                reason: format!("non-finite validation loss {val_loss}"),
            });
        }

        let record = EpochRecord {
            epoch,
            train_loss,
            val_loss,
            val_acc,
            lr: lr_in_effect,
        };
        let is_best = val_loss < best_val_loss - IMPROVEMENT_TOL;
        if is_best {
            best_val_loss = val_loss;
            best_epoch = epoch;
        }
        on_epoch(&record, model, is_best)?;
        history.push(record);

        scheduler.observe(val_loss, config.lr_factor, config.plateau_patience);
    }

    Ok(TrainOutput {
        history,
        best_epoch,
        best_val_loss,
    })
}

/// Write the history as CSV: `epoch,train_loss,val_loss,val_acc,lr`.
pub fn write_history(path: &Path, history: &[EpochRecord]) -> Result<()> {
    let mut out = String::from("epoch,train_loss,val_loss,val_acc,lr\n");
    for r in history {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.epoch, r.train_loss, r.val_loss, r.val_acc, r.lr
        ));
    }
    crate::cohort::write_atomic(path, out.as_bytes())
}

pub fn read_history(path: &Path) -> Result<Vec<EpochRecord>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    let mut rows = Vec::new();
    for row in reader.deserialize::<EpochRecord>() {
        rows.push(row.map_err(|e| Error::csv(path, e))?);
    }
    Ok(rows)
}
