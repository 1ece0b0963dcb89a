//! AdamW, learning-rate schedules and gradient clipping.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::EncoderParams;
use crate::scalar::Scalar;

/// AdamW moment decay rates and denominator offset.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moments mirroring the parameter structure.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimState<T = f64> {
    pub m: EncoderParams<T>,
    pub v: EncoderParams<T>,
    pub step: u64,
}

impl<T: Scalar> OptimState<T> {
    pub fn new(params: &EncoderParams<T>) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        }
    }
}

/// Updates one parameter slice in place. Elements are independent, so the
/// order in which slices are visited does not matter.
#[allow(clippy::too_many_arguments)]
fn adamw_slice<T: Scalar>(
    p: &mut [T],
    g: &[T],
    m: &mut [T],
    v: &mut [T],
    lr: T,
    wd: T,
    h: &AdamW,
    correction: (T, T),
) {
    let (b1, b2, eps) = (T::of(h.beta1), T::of(h.beta2), T::of(h.eps));
    let one = T::one();
    for i in 0..p.len() {
        m[i] = b1 * m[i] + (one - b1) * g[i];
        v[i] = b2 * v[i] + (one - b2) * g[i] * g[i];
        let mhat = m[i] / correction.0;
        let vhat = v[i] / correction.1;
        p[i] = p[i] - lr * wd * p[i] - lr * mhat / (vhat.sqrt() + eps);
    }
}

/// One AdamW step with decoupled weight decay applied to every parameter.
pub fn adamw_step<T: Scalar>(
    params: &mut EncoderParams<T>,
    grads: &EncoderParams<T>,
    state: &mut OptimState<T>,
    lr: f64,
    weight_decay: f64,
    hyper: &AdamW,
) -> Result<()> {
    state.step += 1;
    let t = i32::try_from(state.step).unwrap_or(i32::MAX);
    let correction = (
        T::one() - T::of(hyper.beta1).powi(t),
        T::one() - T::of(hyper.beta2).powi(t),
    );
    let g = grads.tensors();
    let mut p = params.tensors_mut();
    let mut m = state.m.tensors_mut();
    let mut v = state.v.tensors_mut();
    if g.len() != p.len() || m.len() != p.len() || v.len() != p.len() {
        return Err(Error::shape("adamw_step", "parameter structure mismatch"));
    }
    for i in 0..p.len() {
        let (pt, gt) = (&mut p[i].1, g[i].1);
        if !pt.same_shape(gt) || !pt.same_shape(m[i].1) || !pt.same_shape(v[i].1) {
            return Err(Error::shape("adamw_step", format!("tensor `{}`", p[i].0)));
        }
        adamw_slice(
            pt.as_mut_slice(),
            gt.as_slice(),
            m[i].1.as_mut_slice(),
            v[i].1.as_mut_slice(),
            T::of(lr),
            T::of(weight_decay),
            hyper,
            correction,
        );
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Schedule {
    Cosine,
    Constant,
}

impl Schedule {
    pub fn lr(self, step: usize, total_steps: usize, lr_max: f64) -> f64 {
        match self {
            Schedule::Cosine => cosine_schedule(step, total_steps, lr_max),
            Schedule::Constant => lr_max,
        }
    }
}

/// `lr_max · ½(1 + cos(π·step/total))`, clamped to `[0, lr_max]`.
pub fn cosine_schedule(step: usize, total_steps: usize, lr_max: f64) -> f64 {
    if total_steps == 0 {
        return lr_max;
    }
    let frac = (step.min(total_steps) as f64) / total_steps as f64;
    (lr_max * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos())).max(0.0)
}

/// Scales `grads` so their joint L2 norm is at most `max_norm`. Returns the
/// norm before clipping.
pub fn clip_global_norm<T: Scalar>(grads: &mut EncoderParams<T>, max_norm: f64) -> f64 {
    let norm = grads.sum_squares().sqrt().as_f64();
    if norm > max_norm && norm > 0.0 {
        grads.scale_in_place(T::of(max_norm / norm));
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_params, ModelConfig};

    fn tiny() -> (EncoderParams<f64>, EncoderParams<f64>) {
        let cfg = ModelConfig::gradcheck();
        let p = init_params::<f64>(&cfg, 1).unwrap();
        let g = p.zeros_like();
        (p, g)
    }

    #[test]
    fn zero_gradient_zero_decay_is_a_no_op() {
        let (mut p, g) = tiny();
        let before = p.clone();
        let mut st = OptimState::new(&p);
        adamw_step(&mut p, &g, &mut st, 0.01, 0.0, &AdamW::default()).unwrap();
        assert_eq!(p, before);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let (mut p, mut g) = tiny();
        for (_, t) in g.tensors_mut() {
            t.fill(1.0);
        }
        let before = p.clone();
        let mut st = OptimState::new(&p);
        let lr = 0.01;
        adamw_step(&mut p, &g, &mut st, lr, 0.0, &AdamW::default()).unwrap();
        let expected = -lr / (1.0 + 1e-8);
        for ((_, a), (_, b)) in p.tensors().iter().zip(before.tensors()) {
            for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
                assert!(((x - y) - expected).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn decay_only_shrinks_geometrically() {
        let (mut p, g) = tiny();
        let before = p.clone();
        let mut st = OptimState::new(&p);
        let (lr, wd) = (0.1, 0.5);
        for _ in 0..3 {
            adamw_step(&mut p, &g, &mut st, lr, wd, &AdamW::default()).unwrap();
        }
        let factor = (1.0f64 - lr * wd).powi(3);
        let w0 = before.head_w.as_slice()[5];
        assert!((p.head_w.as_slice()[5] - w0 * factor).abs() < 1e-16);
    }

    #[test]
    fn update_is_independent_of_visit_order() {
        let (p0, mut g) = tiny();
        for (i, (_, t)) in g.tensors_mut().into_iter().enumerate() {
            for (j, v) in t.as_mut_slice().iter_mut().enumerate() {
                *v = ((i * 31 + j * 7) % 13) as f64 / 13.0 - 0.5;
            }
        }
        let mut a = p0.clone();
        let mut st = OptimState::new(&a);
        adamw_step(&mut a, &g, &mut st, 0.01, 0.01, &AdamW::default()).unwrap();

        let mut b = p0.clone();
        let mut st_b = OptimState::new(&b);
        let gt = g.tensors();
        let mut pt = b.tensors_mut();
        let mut mt = st_b.m.tensors_mut();
        let mut vt = st_b.v.tensors_mut();
        let corr = (1.0 - 0.9, 1.0 - 0.999);
        for i in (0..pt.len()).rev() {
            adamw_slice(
                pt[i].1.as_mut_slice(),
                gt[i].1.as_slice(),
                mt[i].1.as_mut_slice(),
                vt[i].1.as_mut_slice(),
                0.01,
                0.01,
                &AdamW::default(),
                corr,
            );
        }
        drop(pt);
        assert_eq!(a, b);
    }

    #[test]
    fn cosine_endpoints() {
        assert_eq!(cosine_schedule(0, 100, 0.5), 0.5);
        assert_eq!(cosine_schedule(100, 100, 0.5), 0.0);
        assert!((cosine_schedule(50, 100, 0.5) - 0.25).abs() < 1e-15);
        assert_eq!(Schedule::Constant.lr(70, 100, 0.3), 0.3);
    }

    #[test]
    fn clipping_to_unit_norm() {
        let (_, mut g) = tiny();
        g.head_b.as_mut_slice()[0] = 3.0;
        g.head_b.as_mut_slice()[1] = 4.0;
        let pre = clip_global_norm(&mut g, 1.0);
        assert_eq!(pre, 5.0);
        assert!((g.sum_squares().sqrt() - 1.0).abs() < 1e-12);
        let again = clip_global_norm(&mut g, 1.0);
        assert!((again - 1.0).abs() < 1e-12);
    }
}
