//! Weighted cross-entropy, Adam, the cross-validation split and the
//! training loop.

mod adam;
mod loss;
mod split;

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use adam::{adam_step, OptimizerState};
pub use loss::{one_hot, weighted_cross_entropy, LossSpec, LOG_CLAMP};
pub use split::{crossval_split, validation_size, VALIDATION_DENOMINATOR, VALIDATION_NUMERATOR};

use crate::augment::{augment_sample, AugmentSpec};
use crate::data::SliceRecord;
use crate::error::{Error, Result};
use crate::grid::{Grid, Image, Mask};
use crate::metrics::{dice, MetricConfig};
use crate::nn::{ForwardCtx, Model};
use crate::tensor::{derive_seed, RngStream, Shape4, Tensor4};

/// Stream keys mixed into the master seed.
const SHUFFLE_KEY: u64 = 0x5348_5546;
const SAMPLE_KEY: u64 = 0x4155_474d;
const FORWARD_KEY: u64 = 0x4657_4452;

/// Slices per forward pass during validation and prediction.
const INFER_BATCH: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub dropout_rate: f32,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 35,
            batch_size: 16,
            learning_rate: 1e-5,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            dropout_rate: 0.5,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("epochs", "must be at least 1"));
        }
        self.validate_optimizer()
    }

    /// Everything except the epoch count, which the loop itself accepts as 0.
    fn validate_optimizer(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate", "must be positive and finite"));
        }
        for (field, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::config(field, format!("{b} outside [0, 1)")));
            }
        }
        if !(self.adam_eps > 0.0 && self.adam_eps.is_finite()) {
            return Err(Error::config("adam_eps", "must be positive and finite"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::config("dropout_rate", "must lie in [0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    /// `None` without validation slices.
    pub val_dsc: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// Loss of every optimizer step in order.
    pub step_losses: Vec<f64>,
}

impl TrainHistory {
    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_dsc,seconds\n");
        for r in &self.epochs {
            let val = r.val_dsc.map_or_else(|| "NA".to_string(), |v| v.to_string());
            let _ = writeln!(out, "{},{},{},{:.3}", r.epoch, r.train_loss, val, r.seconds);
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::from(e).at_path(path))
    }
}

/// Stacks single-channel images into an `(n, 1, h, w)` tensor.
pub fn image_batch(images: &[&Image]) -> Result<Tensor4> {
    let (h, w) = images
        .first()
        .map(|i| i.extent())
        .ok_or_else(|| Error::InvalidArgument("empty batch".into()))?;
    let mut data = Vec::with_capacity(images.len() * h * w);
    for img in images {
        if img.extent() != (h, w) {
            return Err(Error::InvalidArgument("images in a batch must share one extent".into()));
        }
        data.extend_from_slice(img.data());
    }
    Tensor4::from_vec(Shape4::new(images.len(), 1, h, w), data)
}

/// Per-pixel argmax over the class channels; ties go to the lower class.
pub fn argmax_masks(probs: &Tensor4) -> Vec<Mask> {
    let s = probs.shape();
    (0..s.n)
        .map(|n| {
            let data = (0..s.plane())
                .map(|i| {
                    let mut best = 0;
                    for c in 1..s.c {
                        if probs.plane(n, c)[i] > probs.plane(n, best)[i] {
                            best = c;
                        }
                    }
                    best as u8
                })
                .collect();
            Grid::from_vec(s.h, s.w, data).expect("plane extents")
        })
        .collect()
}

/// Infer-mode segmentation of each image.
pub fn predict_masks(model: &Model, images: &[&Image]) -> Result<Vec<Mask>> {
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(INFER_BATCH) {
        out.extend(argmax_masks(&model.predict(&image_batch(chunk)?)?));
    }
    Ok(out)
}

/// Mean per-slice Dice of infer-mode predictions, `None` for no slices.
pub fn mean_dice(model: &Model, records: &[SliceRecord], config: &MetricConfig) -> Result<Option<f64>> {
    if records.is_empty() {
        return Ok(None);
    }
    let images: Vec<&Image> = records.iter().map(|r| r.image()).collect();
    let preds = predict_masks(model, &images)?;
    let mut sum = 0.0;
    for (p, r) in preds.iter().zip(records) {
        sum += dice(p, r.mask(), config)?;
    }
    Ok(Some(sum / records.len() as f64))
}

fn check_records(model: &Model, records: &[SliceRecord], what: &str) -> Result<()> {
    let [_, h, w] = model.config().input_shape;
    if let Some(r) = records.iter().find(|r| r.extent() != (h, w)) {
        return Err(Error::InvalidArgument(format!(
            "{what} slice {}/{} is {:?}, model expects {h}x{w}",
            r.case_id(),
            r.slice_index(),
            r.extent()
        )));
    }
    Ok(())
}

/// Trains on `train` for `config.epochs` epochs and scores `val` after each.
///
/// Every random choice comes from streams keyed by the master seed and
/// `(epoch, sample)` or `(epoch, batch)`, so results do not depend on how
/// augmentation work is scheduled across threads.
pub fn train_loop(
    mut model: Model,
    train: &[SliceRecord],
    val: &[SliceRecord],
    config: &TrainConfig,
    loss_spec: &LossSpec,
    augment: &AugmentSpec,
) -> Result<(Model, TrainHistory)> {
    config.validate_optimizer()?;
    augment.validate()?;
    loss_spec.validate(model.config().num_classes)?;
    let mut history = TrainHistory::default();
    if config.epochs == 0 {
        return Ok((model, history));
    }
    if train.is_empty() {
        return Err(Error::InvalidArgument("no training slices".into()));
    }
    check_records(&model, train, "training")?;
    check_records(&model, val, "validation")?;
    model.set_dropout_rate(config.dropout_rate)?;
    let classes = model.config().num_classes;
    let [_, h, w] = model.config().input_shape;
    let mut state = OptimizerState::for_params(&model.graph().params());
    let metric = MetricConfig::default();

    for epoch in 0..config.epochs {
        let started = Instant::now();
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut RngStream::new(derive_seed(config.seed, &[SHUFFLE_KEY, epoch as u64])));
        let progress = epoch as f32 / config.epochs as f32;
        let mut loss_sum = 0.0;
        let batches = order.chunks(config.batch_size);
        let batch_count = batches.len();
        for (b, idx) in batches.enumerate() {
            let samples = idx
                .par_iter()
                .map(|&i| {
                    let r = &train[i];
                    let seed = derive_seed(config.seed, &[SAMPLE_KEY, epoch as u64, i as u64]);
                    augment_sample(r.image(), r.mask(), augment, seed)
                })
                .collect::<Result<Vec<_>>>()?;
            let images: Vec<&Image> = samples.iter().map(|s| &s.0).collect();
            let labels: Vec<&[u8]> = samples.iter().map(|s| s.1.data()).collect();
            let x = image_batch(&images)?;
            let y = one_hot(&labels, classes, h, w)?;

            let ctx = ForwardCtx::train(derive_seed(config.seed, &[FORWARD_KEY, epoch as u64, b as u64]), progress);
            let acts = model.forward(&x, &ctx)?;
            let (loss, grad) = weighted_cross_entropy(acts.output(model.output()), &y, loss_spec)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: b });
            }
            let grads = model.graph().backward(&acts, vec![(model.logits(), grad)])?;
            model.graph_mut().commit_running_stats(&acts)?;
            adam_step(&mut model.graph_mut().params_mut(), &grads.params, &mut state, config)?;
            loss_sum += loss;
            history.step_losses.push(loss);
        }
        let val_dsc = mean_dice(&model, val, &metric)?;
        history.epochs.push(EpochRecord {
            epoch: epoch + 1,
            train_loss: loss_sum / batch_count as f64,
            val_dsc,
            seconds: started.elapsed().as_secs_f64(),
        });
    }
    Ok((model, history))
}
