//! Central finite differences against the analytic backward pass.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{cross_entropy, encoder_backward, forward_with_tape};
use crate::error::Result;
use crate::model::{plan_for, EncoderParams, Image, ModelConfig};

/// Finite-difference step.
pub const FD_STEP: f64 = 1e-5;

/// `|a − n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Worst entry of one parameter tensor.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GroupError {
    pub name: String,
    pub max_error: f64,
    pub analytic: f64,
    pub numeric: f64,
}

/// Worst relative error per parameter tensor.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub seed: u64,
    pub groups: Vec<GroupError>,
    pub max_error: f64,
    pub checked: usize,
}

/// Compares the analytic gradient of the cross-entropy loss for one labelled
/// image against central differences on every parameter scalar.
pub fn gradcheck_params(
    params: &EncoderParams<f64>,
    image: &Image<f64>,
    label: usize,
    config: &ModelConfig,
    seed: u64,
) -> Result<GradcheckReport> {
    let plan = plan_for::<f64>(config)?;
    let (logits, tape) = forward_with_tape(image, params, config, &plan)?;
    let (_, dlogits) = cross_entropy(&logits, label)?;
    let grads = encoder_backward(&dlogits, &tape, params, config, &plan)?;

    let loss_at = |p: &EncoderParams<f64>| -> Result<f64> {
        let (logits, _) = forward_with_tape(image, p, config, &plan)?;
        Ok(cross_entropy(&logits, label)?.0)
    };

    let mut probe = params.clone();
    let mut groups = Vec::new();
    let mut checked = 0;
    let names: Vec<String> = params.tensors().into_iter().map(|(n, _)| n).collect();
    let analytic: Vec<Vec<f64>> = grads
        .tensors()
        .into_iter()
        .map(|(_, t)| t.as_slice().to_vec())
        .collect();
    for (t_idx, name) in names.iter().enumerate() {
        let mut worst = GroupError {
            name: name.clone(),
            max_error: 0.0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for e in 0..analytic[t_idx].len() {
            let original = probe.tensors()[t_idx].1.as_slice()[e];
            set_entry(&mut probe, t_idx, e, original + FD_STEP);
            let plus = loss_at(&probe)?;
            set_entry(&mut probe, t_idx, e, original - FD_STEP);
            let minus = loss_at(&probe)?;
            set_entry(&mut probe, t_idx, e, original);
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let a = analytic[t_idx][e];
            let err = relative_error(a, numeric);
            if err >= worst.max_error {
                worst = GroupError {
                    name: name.clone(),
                    max_error: err,
                    analytic: a,
                    numeric,
                };
            }
            checked += 1;
        }
        groups.push(worst);
    }
    let max_error = groups.iter().fold(0.0f64, |a, g| a.max(g.max_error));
    Ok(GradcheckReport {
        seed,
        groups,
        max_error,
        checked,
    })
}

fn set_entry(params: &mut EncoderParams<f64>, tensor: usize, entry: usize, value: f64) {
    let mut all = params.tensors_mut();
    all[tensor].1.as_mut_slice()[entry] = value;
}

/// Draws a parameter set, an image and a label from `seed` and runs
/// [`gradcheck_params`].
///
/// Every parameter, including biases, embeddings and normalization gains,
/// is drawn uniformly from `[-0.5, 0.5]` (gains from `[0.5, 1.5]`) so that
/// no gradient is structurally zero or vanishingly small.
pub fn gradcheck(config: &ModelConfig, seed: u64) -> Result<GradcheckReport> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = EncoderParams::<f64>::zeros(config)?;
    for (name, t) in params.tensors_mut() {
        let gain = name.ends_with(".gamma");
        for v in t.as_mut_slice() {
            let u: f64 = rng.random_range(-0.5..0.5);
            *v = if gain { 1.0 + u } else { u };
        }
    }
    let n = config.img_h * config.img_w * config.channels;
    let image = Image::new(
        config.img_h,
        config.img_w,
        config.channels,
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )?;
    let label = rng.random_range(0..config.num_classes);
    gradcheck_params(&params, &image, label, config, seed)
}
