//! Mini-batch training with per-epoch validation and early stopping.

use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::adamw::{adamw_step, AdamHyper, AdamState};
use super::early_stop::EarlyStopping;
use super::loss::{smoothed_cross_entropy, smoothed_cross_entropy_backward};
use super::schedule::Schedule;
use crate::data::augment::{preprocess_eval, train_transform, AugmentPolicy};
use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::model::head::argmax;
use crate::model::{GcVit, Parameters};
use crate::rng::{stream_rng, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub lr_max: f64,
    pub lr_min: f64,
    pub weight_decay: f64,
    pub label_smoothing: f64,
    pub patience: usize,
    pub seed: u64,
    pub schedule: Schedule,
    /// When false, training images only get the evaluation transform.
    pub augment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            max_epochs: 100,
            lr_max: 1e-4,
            lr_min: 0.0,
            weight_decay: 1e-4,
            label_smoothing: 0.1,
            patience: 5,
            seed: 0,
            schedule: Schedule::Cosine,
            augment: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.lr_max > 0.0 && self.lr_max.is_finite()) {
            return bad(format!("lr_max {} must be positive", self.lr_max));
        }
        if !(self.lr_min >= 0.0 && self.lr_min <= self.lr_max) {
            return bad(format!("lr_min {} must lie in [0, lr_max]", self.lr_min));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight_decay {} must be non-negative", self.weight_decay));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return bad(format!("label_smoothing {} must lie in [0, 1)", self.label_smoothing));
        }
        if self.patience == 0 {
            return bad("patience must be at least 1".into());
        }
        self.schedule.validate()
    }
}

/// Decoded images in `Raw01` range with their labels.
#[derive(Debug, Clone)]
pub struct LabeledImages {
    pub images: Vec<ImageTensor>,
    pub labels: Vec<usize>,
}

impl LabeledImages {
    pub fn new(images: Vec<ImageTensor>, labels: Vec<usize>) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(Error::Dataset(format!(
                "{} images but {} labels",
                images.len(),
                labels.len()
            )));
        }
        Ok(Self { images, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    pub lr: f64,
}

pub fn write_records(path: &Path, records: &[EpochRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    for r in records {
        w.serialize(r).map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_records(path: &Path) -> Result<Vec<EpochRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    r.deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::csv(path, e))
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    /// Parameters from the epoch with the highest validation accuracy.
    pub best: GcVit,
    pub best_epoch: Option<usize>,
    pub best_val_accuracy: Option<f64>,
    pub records: Vec<EpochRecord>,
    pub stopped_early: bool,
}

/// Mean loss and accuracy of `model` on already-preprocessed images.
pub fn loss_and_accuracy(model: &GcVit, images: &[ImageTensor], labels: &[usize], eps: f64) -> Result<(f64, f64)> {
    if images.is_empty() {
        return Err(Error::Dataset("cannot score an empty set".into()));
    }
    let per_sample: Vec<(f64, bool)> = images
        .par_iter()
        .zip(labels.par_iter())
        .map(|(img, &y)| {
            let logits = model.logits(img)?;
            Ok((smoothed_cross_entropy(logits.view(), y, eps)?, argmax(&logits) == y))
        })
        .collect::<Result<_>>()?;
    let n = per_sample.len() as f64;
    let loss = per_sample.iter().map(|p| p.0).sum::<f64>() / n;
    let acc = per_sample.iter().filter(|p| p.1).count() as f64 / n;
    Ok((loss, acc))
}

struct SampleResult {
    loss: f64,
    correct: bool,
    grad: GcVit,
}

/// Trains `model` and returns the best-validation parameters with the epoch log.
///
/// Per-sample gradients are computed in parallel and summed in batch order, so
/// the result does not depend on the number of worker threads.
pub fn fit(
    model: GcVit,
    train: &LabeledImages,
    val: &LabeledImages,
    policy: &AugmentPolicy,
    cfg: &TrainConfig,
) -> Result<FitOutcome> {
    cfg.validate()?;
    policy.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Dataset("training and validation sets must be non-empty".into()));
    }
    let classes = model.num_classes();
    if let Some(&y) = train.labels.iter().chain(&val.labels).find(|&&y| y >= classes) {
        return Err(Error::Dataset(format!("label {y} out of range for {classes} classes")));
    }
    let val_images: Vec<ImageTensor> = val
        .images
        .par_iter()
        .map(|img| preprocess_eval(img, policy))
        .collect::<Result<_>>()?;
    let clean_train: Option<Vec<ImageTensor>> = if cfg.augment {
        None
    } else {
        Some(
            train
                .images
                .par_iter()
                .map(|img| preprocess_eval(img, policy))
                .collect::<Result<_>>()?,
        )
    };

    let mut params = model;
    let mut best = params.clone();
    let mut adam = AdamState::new(&params);
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut records = Vec::new();
    let mut stopped_early = false;

    for epoch in 1..=cfg.max_epochs {
        let lr = cfg.schedule.learning_rate(epoch - 1, cfg.max_epochs, cfg.lr_min, cfg.lr_max)?;
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut stream_rng(cfg.seed, Stream::Shuffle, &[epoch as u64]));

        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let results: Vec<SampleResult> = batch
                .par_iter()
                .map(|&i| {
                    let input = match &clean_train {
                        Some(imgs) => imgs[i].clone(),
                        None => {
                            let mut rng = stream_rng(cfg.seed, Stream::Augment, &[epoch as u64, i as u64]);
                            train_transform(&train.images[i], policy, &mut rng)?
                        }
                    };
                    let y = train.labels[i];
                    let (logits, cache) = params.forward_train(&input)?;
                    let loss = smoothed_cross_entropy(logits.view(), y, cfg.label_smoothing)?;
                    let dlogits = smoothed_cross_entropy_backward(logits.view(), y, cfg.label_smoothing)?;
                    let mut grad = params.gradient_buffer();
                    params.backward(&cache, &dlogits, &mut grad);
                    Ok(SampleResult {
                        loss,
                        correct: argmax(&logits) == y,
                        grad,
                    })
                })
                .collect::<Result<_>>()?;

            let mut batch_loss = 0.0;
            let mut iter = results.into_iter();
            let first = iter.next().expect("chunks are non-empty");
            batch_loss += first.loss;
            correct += first.correct as usize;
            let mut grad = first.grad;
            for r in iter {
                batch_loss += r.loss;
                correct += r.correct as usize;
                grad.add_assign(&r.grad);
            }
            if !batch_loss.is_finite() {
                return Err(Error::Training(format!(
                    "non-finite loss in epoch {epoch}, batch {b} (samples {batch:?})"
                )));
            }
            loss_sum += batch_loss;
            grad.scale(1.0 / batch.len() as f64);
            adamw_step(&mut params, &grad, &mut adam, lr, cfg.weight_decay, AdamHyper::default())
                .map_err(|e| Error::Training(format!("epoch {epoch}, batch {b}: {e}")))?;
        }

        let n = train.len() as f64;
        let (val_loss, val_acc) = loss_and_accuracy(&params, &val_images, &val.labels, cfg.label_smoothing)?;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / n,
            train_acc: correct as f64 / n,
            val_loss,
            val_acc,
            lr,
        };
        log::info!(
            "epoch {epoch:>3}  lr {lr:.3e}  train loss {:.4} acc {:.4}  val loss {val_loss:.4} acc {val_acc:.4}",
            record.train_loss,
            record.train_acc
        );
        records.push(record);

        let decision = stopper.update(epoch, val_acc);
        if decision.improved {
            best = params.clone();
        }
        if decision.should_stop {
            log::info!(
                "no improvement for {} epochs, stopping at epoch {epoch}",
                stopper.epochs_since_improvement
            );
            stopped_early = true;
            break;
        }
    }

    Ok(FitOutcome {
        best,
        best_epoch: stopper.best_epoch,
        best_val_accuracy: stopper.best,
        records,
        stopped_early,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ModelConfig;
    use crate::data::synth::synth_image;

    fn tiny() -> ModelConfig {
        let mut c = ModelConfig::desk_tiny(3);
        c.input_size = (16, 16);
        c.patch_size = 4;
        c.stem_channels = 4;
        c.embed_dim = 8;
        c.stage_dims = vec![8, 16];
        c.stage_depths = vec![1, 1];
        c.num_heads = vec![2, 2];
        c
    }

    fn data(per_class: usize, seed: u64) -> LabeledImages {
        let mut images = Vec::new();
        let mut labels = Vec::new();
        for c in 0..3 {
            for i in 0..per_class {
                images.push(synth_image(3, c, i, 16, seed));
                labels.push(c);
            }
        }
        LabeledImages::new(images, labels).unwrap()
    }

    fn quick_cfg() -> TrainConfig {
        TrainConfig {
            batch_size: 4,
            max_epochs: 3,
            lr_max: 1e-3,
            patience: 5,
            augment: false,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_epochs_returns_initial_parameters() {
        let model = GcVit::init(tiny(), 1).unwrap();
        let cfg = TrainConfig { max_epochs: 0, ..quick_cfg() };
        let out = fit(model.clone(), &data(2, 1), &data(1, 2), &AugmentPolicy::identity(16), &cfg).unwrap();
        assert_eq!(out.best, model);
        assert!(out.records.is_empty());
        assert_eq!(out.best_epoch, None);
    }

    #[test]
    fn short_run_logs_every_epoch_and_keeps_best() {
        let model = GcVit::init(tiny(), 1).unwrap();
        let val = data(1, 2);
        let policy = AugmentPolicy::identity(16);
        let out = fit(model, &data(3, 1), &val, &policy, &quick_cfg()).unwrap();
        assert_eq!(out.records.len(), 3);
        assert!(out.records.iter().all(|r| r.train_loss.is_finite()));
        let best_epoch = out.best_epoch.unwrap();
        let best_acc = out.records[best_epoch - 1].val_acc;
        assert_eq!(out.best_val_accuracy, Some(best_acc));
        let val_imgs: Vec<_> = val.images.iter().map(|i| preprocess_eval(i, &policy).unwrap()).collect();
        let (_, acc) = loss_and_accuracy(&out.best, &val_imgs, &val.labels, 0.1).unwrap();
        assert_eq!(acc, best_acc);
    }

    #[test]
    fn result_is_reproducible_with_augmentation() {
        let cfg = TrainConfig { augment: true, max_epochs: 2, ..quick_cfg() };
        let policy = AugmentPolicy::with_crop_size(16);
        let run = || fit(GcVit::init(tiny(), 4).unwrap(), &data(2, 1), &data(1, 2), &policy, &cfg).unwrap();
        let (a, b) = (run(), run());
        assert_eq!(a.best, b.best);
        assert_eq!(a.records, b.records);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let model = GcVit::init(tiny(), 1).unwrap();
        let cfg = TrainConfig { batch_size: 0, ..quick_cfg() };
        assert!(fit(model, &data(1, 1), &data(1, 2), &AugmentPolicy::identity(16), &cfg).is_err());
    }
}
