//! Reverse-mode gradients, the loss, a finite-difference oracle, the
//! optimizer and the training loop.
//!
//! Every backward here works on DCT-domain values. Because the transform is
//! orthogonal, the gradient with respect to a spatial tensor is the inverse
//! transform of the gradient with respect to its DCT-domain image, so no
//! separate spatial versions are needed.

mod check;
mod optim;
mod train;

pub use check::{
    gradcheck, gradcheck_params, relative_error, GradcheckReport, GroupError, FD_STEP,
};
pub use optim::{adamw_step, clip_global_norm, cosine_schedule, AdamW, OptimState, Schedule};
pub use train::{
    evaluate, sample_gradient, train, write_metrics, MetricRow, Split, TrainConfig, TrainOutcome,
};

use crate::ctensor::{slice_matmul, slice_matmul_nt, slice_matmul_tn};
use crate::error::{Error, Result};
use crate::layers::{
    gelu_derivative, AttentionCache, FfnCache, HeadParams, LayerNormCache, MhsaCache,
    TLayerNormParams, TLinearParams,
};
use crate::model::{
    forward_trace, BlockCache, BlockParams, EncoderParams, ForwardTrace, Image, ModelConfig,
};
use crate::scalar::Scalar;
use crate::tensor::Tensor3;
use crate::transform::{dct3, idct3, DctPlan};

/// Activations recorded by a forward pass.
pub type GradTape<T = f64> = ForwardTrace<T>;

/// Runs the encoder forward and keeps everything the backward pass needs.
pub fn forward_with_tape<T: Scalar>(
    image: &Image<T>,
    params: &EncoderParams<T>,
    config: &ModelConfig,
    plan: &DctPlan<T>,
) -> Result<(Vec<T>, GradTape<T>)> {
    let tape = forward_trace(image, params, config, plan)?;
    Ok((tape.logits.clone(), tape))
}

/// Gradients of one t-Linear layer, all in the DCT domain.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearGrads<T = f64> {
    pub dx: Tensor3<T>,
    pub dw: Tensor3<T>,
    pub db: Tensor3<T>,
}

/// `dŴ⁽ᵏ⁾ = X̂⁽ᵏ⁾ᵀ dŶ⁽ᵏ⁾`, `dX̂⁽ᵏ⁾ = dŶ⁽ᵏ⁾ Ŵ⁽ᵏ⁾ᵀ`, `db̂⁽ᵏ⁾` = column sums of
/// `dŶ⁽ᵏ⁾`. `xh` is the DCT-domain input recorded by the forward pass.
pub fn t_linear_backward<T: Scalar>(
    dyh: &Tensor3<T>,
    xh: &Tensor3<T>,
    p: &TLinearParams<T>,
) -> Result<LinearGrads<T>> {
    let (n, d_out, c) = dyh.shape();
    if xh.rows() != n || xh.cols() != p.d_in() || d_out != p.d_out() || c != p.chans() {
        return Err(Error::shape(
            "t_linear_backward",
            format!(
                "dY {:?}, X {:?}, W {:?}",
                dyh.shape(),
                xh.shape(),
                p.w.shape()
            ),
        ));
    }
    let dw = slice_matmul_tn(xh, dyh)?;
    let dx = slice_matmul_nt(dyh, &p.w)?;
    let mut db = Tensor3::zeros(1, d_out, c);
    for i in 0..n {
        for (acc, &v) in db.as_mut_slice().iter_mut().zip(dyh.row(i)) {
            *acc += v;
        }
    }
    Ok(LinearGrads { dx, dw, db })
}

fn linear_backward_acc<T: Scalar>(
    dyh: &Tensor3<T>,
    xh: &Tensor3<T>,
    p: &TLinearParams<T>,
    g: &mut TLinearParams<T>,
) -> Result<Tensor3<T>> {
    let lg = t_linear_backward(dyh, xh, p)?;
    g.w.add_assign(&lg.dw)?;
    g.b.add_assign(&lg.db)?;
    Ok(lg.dx)
}

/// Vector-Jacobian product of the slice-wise row softmax: given the
/// probabilities `P` and upstream `dP`, returns `P ⊙ (dP − rowsum(dP ⊙ P))`.
pub fn t_softmax_backward<T: Scalar>(dp: &Tensor3<T>, probs: &Tensor3<T>) -> Result<Tensor3<T>> {
    probs.check_same_shape(dp, "t_softmax_backward")?;
    let (n, m, c) = probs.shape();
    let mut ds = Tensor3::zeros(n, m, c);
    for i in 0..n {
        let (p, g) = (probs.row(i), dp.row(i));
        let out = ds.row_mut(i);
        for k in 0..c {
            let mut dot = T::zero();
            for j in 0..m {
                dot += p[j * c + k] * g[j * c + k];
            }
            for j in 0..m {
                let idx = j * c + k;
                out[idx] = p[idx] * (g[idx] - dot);
            }
        }
    }
    Ok(ds)
}

/// Elementwise `dx = dy · gelu'(x)` for spatial pre-activations `x`.
pub fn gelu_backward<T: Scalar>(dy: &Tensor3<T>, pre: &Tensor3<T>) -> Result<Tensor3<T>> {
    dy.zip_map(pre, |g, x| g * gelu_derivative(x))
}

/// Layer-norm backward through the `(σ + ε)` denominator. Returns
/// `(dX̂, dγ, dβ)`. Rows with `σ = 0` use the one-sided limit in which the
/// standard-deviation term vanishes.
pub fn t_layernorm_backward<T: Scalar>(
    dyh: &Tensor3<T>,
    cache: &LayerNormCache<T>,
    p: &TLayerNormParams<T>,
) -> Result<(Tensor3<T>, Tensor3<T>, Tensor3<T>)> {
    cache
        .normalized
        .check_same_shape(dyh, "t_layernorm_backward")?;
    let (n, d, c) = dyh.shape();
    if p.gamma.shape() != (1, d, c) || cache.sigma.shape() != (n, 1, c) {
        return Err(Error::shape(
            "t_layernorm_backward",
            "cache or parameters do not match upstream gradient",
        ));
    }
    let inv_d = T::one() / T::from_count(d);
    let gamma = p.gamma.row(0);
    let mut dx = Tensor3::zeros(n, d, c);
    let mut dgamma = Tensor3::zeros(1, d, c);
    let mut dbeta = Tensor3::zeros(1, d, c);
    let mut dxn = vec![T::zero(); d];
    for i in 0..n {
        let (g, xn) = (dyh.row(i), cache.normalized.row(i));
        for (idx, (&gv, &xv)) in g.iter().zip(xn).enumerate() {
            dgamma.as_mut_slice()[idx] += gv * xv;
            dbeta.as_mut_slice()[idx] += gv;
        }
        for k in 0..c {
            let sigma = cache.sigma[(i, 0, k)];
            let s = sigma + p.eps;
            let mut mean = T::zero();
            let mut proj = T::zero();
            for j in 0..d {
                let idx = j * c + k;
                dxn[j] = g[idx] * gamma[idx];
                mean += dxn[j];
                proj += dxn[j] * xn[idx];
            }
            mean *= inv_d;
            let coef = if sigma > T::zero() {
                proj * inv_d / sigma
            } else {
                T::zero()
            };
            let out = dx.row_mut(i);
            for j in 0..d {
                let idx = j * c + k;
                out[idx] = (dxn[j] - mean) / s - xn[idx] * coef;
            }
        }
    }
    Ok((dx, dgamma, dbeta))
}

/// Backward of one fused attention head. Returns `(dQ̂, dK̂, dV̂)`.
pub fn t_attention_backward<T: Scalar>(
    doh: &Tensor3<T>,
    cache: &AttentionCache<T>,
) -> Result<(Tensor3<T>, Tensor3<T>, Tensor3<T>)> {
    if doh.shape() != cache.v.shape() {
        return Err(Error::shape(
            "t_attention_backward",
            format!("dO {:?} vs V {:?}", doh.shape(), cache.v.shape()),
        ));
    }
    let scale = T::one() / T::from_count(cache.q.cols()).sqrt();
    let dv = slice_matmul_tn(&cache.probs, doh)?;
    let dp = slice_matmul_nt(doh, &cache.v)?;
    let ds = t_softmax_backward(&dp, &cache.probs)?.scale(scale);
    let dq = slice_matmul(&ds, &cache.k)?;
    let dk = slice_matmul_tn(&ds, &cache.q)?;
    Ok((dq, dk, dv))
}

/// Multi-head attention backward. Parameter gradients are added to `g`;
/// returns `dX̂`.
pub fn t_mhsa_backward<T: Scalar>(
    dyh: &Tensor3<T>,
    cache: &MhsaCache<T>,
    p: &HeadParams<T>,
    g: &mut HeadParams<T>,
) -> Result<Tensor3<T>> {
    if cache.heads.len() != p.heads() || g.heads() != p.heads() {
        return Err(Error::shape("t_mhsa_backward", "head count mismatch"));
    }
    let dconcat = linear_backward_acc(dyh, &cache.concat, &p.output, &mut g.output)?;
    let dh = p.head_dim();
    let mut dx = Tensor3::zeros(cache.input.rows(), cache.input.cols(), cache.input.chans());
    for (h, head) in cache.heads.iter().enumerate() {
        let doh = dconcat.col_block(h * dh, dh)?;
        let (dq, dk, dv) = t_attention_backward(&doh, head)?;
        dx.add_assign(&linear_backward_acc(
            &dq,
            &cache.input,
            &p.query[h],
            &mut g.query[h],
        )?)?;
        let key = t_linear_backward(&dk, &cache.input, &p.key[h])?;
        g.key[h].w.add_assign(&key.dw)?;
        dx.add_assign(&key.dx)?;
        dx.add_assign(&linear_backward_acc(
            &dv,
            &cache.input,
            &p.value[h],
            &mut g.value[h],
        )?)?;
    }
    Ok(dx)
}

/// Feed-forward backward. The GELU derivative is applied in the spatial
/// domain, mirroring the forward pass.
pub fn t_ffn_backward<T: Scalar>(
    dyh: &Tensor3<T>,
    cache: &FfnCache<T>,
    p1: &TLinearParams<T>,
    p2: &TLinearParams<T>,
    g1: &mut TLinearParams<T>,
    g2: &mut TLinearParams<T>,
    plan: &DctPlan<T>,
) -> Result<Tensor3<T>> {
    let dact_h = linear_backward_acc(dyh, &cache.activation_hat, p2, g2)?;
    let dact = idct3(&dact_h, plan)?;
    let dpre = gelu_backward(&dact, &cache.pre_activation)?;
    let dhidden = dct3(&dpre, plan)?;
    linear_backward_acc(&dhidden, &cache.input, p1, g1)
}

/// Backward of one pre-norm block; parameter gradients are added to `g`.
pub fn block_backward<T: Scalar>(
    dout: &Tensor3<T>,
    cache: &BlockCache<T>,
    p: &BlockParams<T>,
    g: &mut BlockParams<T>,
    plan: &DctPlan<T>,
) -> Result<Tensor3<T>> {
    let df = t_ffn_backward(
        dout,
        &cache.ffn,
        &p.ffn1,
        &p.ffn2,
        &mut g.ffn1,
        &mut g.ffn2,
        plan,
    )?;
    let (dln2, dgamma2, dbeta2) = t_layernorm_backward(&df, &cache.ln2, &p.ln2)?;
    g.ln2.gamma.add_assign(&dgamma2)?;
    g.ln2.beta.add_assign(&dbeta2)?;
    let dy = dout.add(&dln2)?;
    let dm = t_mhsa_backward(&dy, &cache.attn, &p.attn, &mut g.attn)?;
    let (dln1, dgamma1, dbeta1) = t_layernorm_backward(&dm, &cache.ln1, &p.ln1)?;
    g.ln1.gamma.add_assign(&dgamma1)?;
    g.ln1.beta.add_assign(&dbeta1)?;
    dy.add(&dln1)
}

/// Full backward pass from logit gradients to every parameter.
pub fn encoder_backward<T: Scalar>(
    dlogits: &[T],
    tape: &GradTape<T>,
    params: &EncoderParams<T>,
    config: &ModelConfig,
    plan: &DctPlan<T>,
) -> Result<EncoderParams<T>> {
    let classes = params.head_w.cols();
    if dlogits.len() != classes || tape.blocks.len() != params.blocks.len() {
        return Err(Error::shape(
            "encoder_backward",
            "tape or logit gradient does not match parameters",
        ));
    }
    let mut g = params.zeros_like();

    let mut dz = vec![T::zero(); tape.features.len()];
    for (r, (&z, dzr)) in tape.features.iter().zip(dz.iter_mut()).enumerate() {
        let (wrow, grow) = (params.head_w.row(r), g.head_w.row_mut(r));
        for c in 0..classes {
            grow[c] = z * dlogits[c];
            *dzr += wrow[c] * dlogits[c];
        }
    }
    g.head_b.as_mut_slice().copy_from_slice(dlogits);

    let (d, c) = (config.dim(), config.slices());
    let dcls_hat = dct3(&Tensor3::from_vec(1, d, c, dz)?, plan)?;
    let mut dnormed = Tensor3::zeros(config.tokens(), d, c);
    dnormed.row_mut(0).copy_from_slice(dcls_hat.as_slice());

    let (mut dxh, dgamma, dbeta) =
        t_layernorm_backward(&dnormed, &tape.final_ln, &params.final_ln)?;
    g.final_ln.gamma.add_assign(&dgamma)?;
    g.final_ln.beta.add_assign(&dbeta)?;

    for ((cache, p), gb) in tape
        .blocks
        .iter()
        .zip(&params.blocks)
        .zip(g.blocks.iter_mut())
        .rev()
    {
        dxh = block_backward(&dxh, cache, p, gb, plan)?;
    }

    let dx0 = idct3(&dxh, plan)?;
    g.pos.add_assign(&dx0)?;
    g.cls.add_assign(&dx0.row_block(0, 1)?)?;
    if let (Some(proj), Some(gproj)) = (&params.patch_proj, g.patch_proj.as_mut()) {
        let dtokens = dx0.row_block(1, config.num_patches())?;
        let flat = tape
            .patches
            .clone()
            .reshape(config.num_patches(), config.flat_dim(), 1)?;
        linear_backward_acc(&dtokens, &flat, proj, gproj)?;
    }
    Ok(g)
}

/// `−log softmax(logits)[label]` and its gradient `softmax − one_hot`.
pub fn cross_entropy<T: Scalar>(logits: &[T], label: usize) -> Result<(T, Vec<T>)> {
    if label >= logits.len() {
        return Err(Error::Label {
            label,
            classes: logits.len(),
        });
    }
    let max = logits.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
    let exps: Vec<T> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    let loss = total.ln() + max - logits[label];
    let mut grad: Vec<T> = exps.iter().map(|&e| e / total).collect();
    grad[label] -= T::one();
    Ok((loss, grad))
}
