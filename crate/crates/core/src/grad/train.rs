//! Mini-batch training and evaluation.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::optim::{adamw_step, clip_global_norm, AdamW, OptimState, Schedule};
use super::{cross_entropy, encoder_backward, forward_with_tape};
use crate::data::{augment, Dataset};
use crate::error::{Error, Result};
use crate::model::{plan_for, EncoderParams, Image, ModelConfig};
use crate::transform::DctPlan;

/// Samples processed in parallel before their gradients are folded in.
const CHUNK: usize = 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub clip_norm: f64,
    pub schedule: Schedule,
    pub seed: u64,
    /// Run every sample on the calling thread.
    pub deterministic: bool,
    pub augment: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub epoch: usize,
    pub split: Split,
    pub loss: f64,
    pub accuracy: f64,
    pub lr: f64,
}

/// Writes metric rows as CSV with the header
/// `epoch,split,loss,accuracy,lr`.
pub fn write_metrics<W: std::io::Write>(rows: &[MetricRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)
            .map_err(|e| Error::Dataset(format!("metrics: {e}")))?;
    }
    w.flush()
        .map_err(|e| Error::Dataset(format!("metrics: {e}")))?;
    Ok(())
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: EncoderParams<f64>,
    pub metrics: Vec<MetricRow>,
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Loss, correctness, and parameter gradients for one labelled image.
pub fn sample_gradient(
    image: &Image<f64>,
    label: usize,
    params: &EncoderParams<f64>,
    config: &ModelConfig,
    plan: &DctPlan<f64>,
) -> Result<(f64, bool, EncoderParams<f64>)> {
    let (logits, tape) = forward_with_tape(image, params, config, plan)?;
    let (loss, dlogits) = cross_entropy(&logits, label)?;
    let grads = encoder_backward(&dlogits, &tape, params, config, plan)?;
    Ok((loss, argmax(&logits) == label, grads))
}

fn map_samples<R, F>(indices: &[usize], serial: bool, f: F) -> Result<Vec<R>>
where
    R: Send,
    F: Fn(usize) -> Result<R> + Sync + Send,
{
    if serial {
        indices.iter().map(|&i| f(i)).collect()
    } else {
        indices.par_iter().map(|&i| f(i)).collect()
    }
}

/// Mean cross-entropy and accuracy over a dataset.
pub fn evaluate(
    params: &EncoderParams<f64>,
    config: &ModelConfig,
    data: &Dataset,
    deterministic: bool,
) -> Result<(f64, f64)> {
    if data.is_empty() {
        return Err(Error::Dataset("cannot evaluate on an empty dataset".into()));
    }
    let plan = plan_for::<f64>(config)?;
    let indices: Vec<usize> = (0..data.len()).collect();
    let results = map_samples(&indices, deterministic, |i| {
        let logits = crate::model::forward_trace(&data.images[i], params, config, &plan)?.logits;
        let (loss, _) = cross_entropy(&logits, data.labels[i])?;
        Ok((loss, argmax(&logits) == data.labels[i]))
    })?;
    let mut total = 0.0;
    let mut correct = 0usize;
    for (loss, ok) in results {
        total += loss;
        correct += usize::from(ok);
    }
    let n = data.len() as f64;
    Ok((total / n, correct as f64 / n))
}

fn validate(config: &TrainConfig, model: &ModelConfig, data: &Dataset) -> Result<()> {
    model.validate()?;
    if data.is_empty() {
        return Err(Error::Dataset("training set is empty".into()));
    }
    if config.batch_size == 0 || config.batch_size > data.len() {
        return Err(Error::Config(format!(
            "batch size {} must be between 1 and the training set size {}",
            config.batch_size,
            data.len()
        )));
    }
    if config.epochs == 0 {
        return Err(Error::Config("epochs must be positive".into()));
    }
    if let Some(&bad) = data.labels.iter().find(|&&l| l >= model.num_classes) {
        return Err(Error::Label {
            label: bad,
            classes: model.num_classes,
        });
    }
    Ok(())
}

/// Trains `initial` with AdamW, a per-step learning-rate schedule and
/// global-norm clipping.
///
/// Each epoch visits the training set in a fresh permutation drawn from the
/// seeded generator. Per-sample gradients may be computed in parallel, but
/// they are always summed in batch order, so results do not depend on the
/// thread count. After every epoch a `train` row (mean loss and accuracy
/// seen during the epoch) and, when a test set is given, a `test` row are
/// appended and passed to `on_row`.
pub fn train(
    model: &ModelConfig,
    config: &TrainConfig,
    train_set: &Dataset,
    test_set: Option<&Dataset>,
    initial: EncoderParams<f64>,
    on_row: &mut dyn FnMut(&MetricRow),
) -> Result<TrainOutcome> {
    validate(config, model, train_set)?;
    let plan = plan_for::<f64>(model)?;
    let mut params = initial;
    let mut state = OptimState::new(&params);
    let hyper = AdamW::default();
    let mut order_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut aug_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_a11d);
    let steps_per_epoch = train_set.len().div_ceil(config.batch_size);
    let total_steps = steps_per_epoch * config.epochs;
    let mut metrics = Vec::new();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut step = 0usize;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut order_rng);
        let mut epoch_loss = 0.0;
        let mut epoch_correct = 0usize;
        let mut lr = config.lr;
        for batch in order.chunks(config.batch_size) {
            let images: Vec<Image<f64>> = batch
                .iter()
                .map(|&i| {
                    if config.augment {
                        augment(&train_set.images[i], &mut aug_rng)
                    } else {
                        train_set.images[i].clone()
                    }
                })
                .collect();
            let mut grads = params.zeros_like();
            let positions: Vec<usize> = (0..batch.len()).collect();
            for chunk in positions.chunks(CHUNK) {
                let results = map_samples(chunk, config.deterministic, |pos| {
                    sample_gradient(
                        &images[pos],
                        train_set.labels[batch[pos]],
                        &params,
                        model,
                        &plan,
                    )
                })?;
                for (loss, ok, g) in results {
                    epoch_loss += loss;
                    epoch_correct += usize::from(ok);
                    grads.axpy(1.0, &g)?;
                }
            }
            grads.scale_in_place(1.0 / batch.len() as f64);
            clip_global_norm(&mut grads, config.clip_norm);
            lr = config.schedule.lr(step, total_steps, config.lr);
            adamw_step(
                &mut params,
                &grads,
                &mut state,
                lr,
                config.weight_decay,
                &hyper,
            )?;
            step += 1;
        }
        let n = train_set.len() as f64;
        let row = MetricRow {
            epoch,
            split: Split::Train,
            loss: epoch_loss / n,
            accuracy: epoch_correct as f64 / n,
            lr,
        };
        on_row(&row);
        metrics.push(row);
        if let Some(test) = test_set {
            let (loss, accuracy) = evaluate(&params, model, test, config.deterministic)?;
            let row = MetricRow {
                epoch,
                split: Split::Test,
                loss,
                accuracy,
                lr,
            };
            on_row(&row);
            metrics.push(row);
        }
    }
    Ok(TrainOutcome { params, metrics })
}
