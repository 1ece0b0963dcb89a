//! Tensorized transformer layers.
//!
//! Each layer comes in two forms: a `*_hat` kernel that consumes and produces
//! DCT-domain tensors (optionally recording what its backward pass needs),
//! and a `t_*` wrapper with spatial-domain input and output that simply
//! brackets the kernel with `dct3`/`idct3`. Learned weights, biases and the
//! normalization scale/shift are stored in the DCT domain.

use crate::ctensor::{slice_matmul, slice_matmul_nt};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor3;
use crate::transform::{dct3, idct3, DctPlan};

/// Default normalization epsilon.
pub const LAYERNORM_EPS: f64 = 1e-5;

/// Weight `d_in × d_out × C` and bias `1 × d_out × C`, both DCT domain.
#[derive(Clone, Debug, PartialEq)]
pub struct TLinearParams<T = f64> {
    pub w: Tensor3<T>,
    pub b: Tensor3<T>,
}

impl<T: Scalar> TLinearParams<T> {
    pub fn zeros(d_in: usize, d_out: usize, chans: usize) -> Self {
        Self {
            w: Tensor3::zeros(d_in, d_out, chans),
            b: Tensor3::zeros(1, d_out, chans),
        }
    }

    /// Builds parameters from spatial-domain weight and bias tensors.
    pub fn from_spatial(w: &Tensor3<T>, b: &Tensor3<T>, plan: &DctPlan<T>) -> Result<Self> {
        if b.rows() != 1 || b.cols() != w.cols() {
            return Err(Error::shape(
                "TLinearParams::from_spatial",
                format!("bias {:?} for weight {:?}", b.shape(), w.shape()),
            ));
        }
        Ok(Self {
            w: dct3(w, plan)?,
            b: dct3(b, plan)?,
        })
    }

    pub fn d_in(&self) -> usize {
        self.w.rows()
    }

    pub fn d_out(&self) -> usize {
        self.w.cols()
    }

    pub fn chans(&self) -> usize {
        self.w.chans()
    }
}

/// Scale `γ` and shift `β`, each `1 × d × C`, DCT domain.
#[derive(Clone, Debug, PartialEq)]
pub struct TLayerNormParams<T = f64> {
    pub gamma: Tensor3<T>,
    pub beta: Tensor3<T>,
    pub eps: T,
}

impl<T: Scalar> TLayerNormParams<T> {
    /// `γ = 1`, `β = 0`, default epsilon.
    pub fn new(d: usize, chans: usize) -> Self {
        Self {
            gamma: Tensor3::filled(1, d, chans, T::one()),
            beta: Tensor3::zeros(1, d, chans),
            eps: T::of(LAYERNORM_EPS),
        }
    }
}

/// Per-head query/key/value projections plus the shared output projection.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadParams<T = f64> {
    pub query: Vec<TLinearParams<T>>,
    pub key: Vec<TLinearParams<T>>,
    pub value: Vec<TLinearParams<T>>,
    pub output: TLinearParams<T>,
}

impl<T: Scalar> HeadParams<T> {
    /// Zero-initialized parameters; `d` must be divisible by `heads`.
    pub fn zeros(d: usize, heads: usize, chans: usize) -> Result<Self> {
        if heads == 0 || !d.is_multiple_of(heads) {
            return Err(Error::Config(format!(
                "embedding dimension {d} is not divisible by {heads} heads"
            )));
        }
        let dh = d / heads;
        let proj = || {
            (0..heads)
                .map(|_| TLinearParams::zeros(d, dh, chans))
                .collect()
        };
        Ok(Self {
            query: proj(),
            key: proj(),
            value: proj(),
            output: TLinearParams::zeros(d, d, chans),
        })
    }

    pub fn heads(&self) -> usize {
        self.query.len()
    }

    pub fn d(&self) -> usize {
        self.output.d_out()
    }

    pub fn head_dim(&self) -> usize {
        self.query.first().map_or(0, |p| p.d_out())
    }

    fn validate(&self) -> Result<()> {
        let h = self.heads();
        if h == 0 || self.key.len() != h || self.value.len() != h {
            return Err(Error::Config("inconsistent head counts".into()));
        }
        let d = self.d();
        if !d.is_multiple_of(h) || self.head_dim() * h != d {
            return Err(Error::Config(format!(
                "embedding dimension {d} is not divisible by {h} heads"
            )));
        }
        Ok(())
    }
}

/// `X̂⁽ᵏ⁾ Ŵ⁽ᵏ⁾ + 1·b̂⁽ᵏ⁾` for every slice.
pub fn linear_hat<T: Scalar>(xh: &Tensor3<T>, p: &TLinearParams<T>) -> Result<Tensor3<T>> {
    if p.b.rows() != 1 || p.b.cols() != p.w.cols() || p.b.chans() != p.w.chans() {
        return Err(Error::shape("t_linear", "bias shape does not match weight"));
    }
    let mut y = slice_matmul(xh, &p.w)?;
    let bias = p.b.row(0);
    for i in 0..y.rows() {
        for (v, &b) in y.row_mut(i).iter_mut().zip(bias) {
            *v += b;
        }
    }
    Ok(y)
}

/// Tensor linear projection `X ⋆c W + b`.
pub fn t_linear<T: Scalar>(
    x: &Tensor3<T>,
    p: &TLinearParams<T>,
    plan: &DctPlan<T>,
) -> Result<Tensor3<T>> {
    idct3(&linear_hat(&dct3(x, plan)?, p)?, plan)
}

/// Exact GELU, `x·Φ(x)`.
#[inline]
pub fn gelu<T: Scalar>(x: T) -> T {
    T::of(0.5) * x * (T::one() + (x * T::FRAC_1_SQRT_2()).erf())
}

/// `d/dx gelu(x) = Φ(x) + x·φ(x)`.
#[inline]
pub fn gelu_derivative<T: Scalar>(x: T) -> T {
    let cdf = T::of(0.5) * (T::one() + (x * T::FRAC_1_SQRT_2()).erf());
    let pdf = (-(x * x) * T::of(0.5)).exp() / (T::TAU()).sqrt();
    cdf + x * pdf
}

/// Row-wise softmax of every frontal slice (max-subtracted).
pub fn softmax_rows_hat<T: Scalar>(sh: &Tensor3<T>) -> Tensor3<T> {
    let (n, m, c) = sh.shape();
    let mut out = Tensor3::zeros(n, m, c);
    for i in 0..n {
        let row = sh.row(i);
        let dst = out.row_mut(i);
        for k in 0..c {
            let max = (0..m).fold(T::neg_infinity(), |acc, j| acc.max(row[j * c + k]));
            let mut total = T::zero();
            for j in 0..m {
                let e = (row[j * c + k] - max).exp();
                dst[j * c + k] = e;
                total += e;
            }
            for j in 0..m {
                dst[j * c + k] /= total;
            }
        }
    }
    out
}

/// Tensor softmax. The normalized values live in the DCT domain; the
/// returned tensor is their inverse transform so that it composes with
/// [`crate::ctensor::cprod`].
pub fn t_softmax<T: Scalar>(s: &Tensor3<T>, plan: &DctPlan<T>) -> Result<Tensor3<T>> {
    if s.rows() != s.cols() {
        return Err(Error::shape(
            "t_softmax",
            format!("expected square slices, got {:?}", s.shape()),
        ));
    }
    idct3(&softmax_rows_hat(&dct3(s, plan)?), plan)
}

/// Attention probabilities for one head, kept for the backward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionCache<T = f64> {
    pub q: Tensor3<T>,
    pub k: Tensor3<T>,
    pub v: Tensor3<T>,
    pub probs: Tensor3<T>,
}

/// Fused attention on DCT-domain operands. Returns the DCT-domain output
/// and the softmax probabilities.
pub fn attention_hat<T: Scalar>(
    qh: &Tensor3<T>,
    kh: &Tensor3<T>,
    vh: &Tensor3<T>,
) -> Result<(Tensor3<T>, Tensor3<T>)> {
    if !qh.same_shape(kh) || qh.rows() != vh.rows() || qh.chans() != vh.chans() {
        return Err(Error::shape(
            "t_attention",
            format!("q {:?}, k {:?}, v {:?}", qh.shape(), kh.shape(), vh.shape()),
        ));
    }
    let scale = T::one() / T::from_count(qh.cols()).sqrt();
    let scores = slice_matmul_nt(qh, kh)?.scale(scale);
    let probs = softmax_rows_hat(&scores);
    let out = slice_matmul(&probs, vh)?;
    Ok((out, probs))
}

/// `t-Softmax(Q ⋆c Kᵀᶜ / √d_h) ⋆c V`, evaluated with one transform per
/// operand and one inverse transform at the end.
pub fn t_attention<T: Scalar>(
    q: &Tensor3<T>,
    k: &Tensor3<T>,
    v: &Tensor3<T>,
    plan: &DctPlan<T>,
) -> Result<Tensor3<T>> {
    let (out, _) = attention_hat(&dct3(q, plan)?, &dct3(k, plan)?, &dct3(v, plan)?)?;
    idct3(&out, plan)
}

/// Everything the multi-head attention backward needs.
#[derive(Clone, Debug, PartialEq)]
pub struct MhsaCache<T = f64> {
    pub input: Tensor3<T>,
    pub heads: Vec<AttentionCache<T>>,
    pub concat: Tensor3<T>,
}

/// Multi-head self-attention in the DCT domain, with its cache.
pub fn mhsa_hat_cached<T: Scalar>(
    xh: &Tensor3<T>,
    p: &HeadParams<T>,
) -> Result<(Tensor3<T>, MhsaCache<T>)> {
    p.validate()?;
    let mut outs = Vec::with_capacity(p.heads());
    let mut caches = Vec::with_capacity(p.heads());
    for h in 0..p.heads() {
        let q = linear_hat(xh, &p.query[h])?;
        // A key bias adds `q_i · b` to every score of row `i`, which the row
        // softmax cancels exactly; it is a parameter but is not applied.
        let k = slice_matmul(xh, &p.key[h].w)?;
        let v = linear_hat(xh, &p.value[h])?;
        let (o, probs) = attention_hat(&q, &k, &v)?;
        outs.push(o);
        caches.push(AttentionCache { q, k, v, probs });
    }
    let concat = Tensor3::concat_cols(&outs)?;
    let y = linear_hat(&concat, &p.output)?;
    Ok((
        y,
        MhsaCache {
            input: xh.clone(),
            heads: caches,
            concat,
        },
    ))
}

pub fn mhsa_hat<T: Scalar>(xh: &Tensor3<T>, p: &HeadParams<T>) -> Result<Tensor3<T>> {
    mhsa_hat_cached(xh, p).map(|(y, _)| y)
}

/// Tensor multi-head self-attention.
pub fn t_mhsa<T: Scalar>(
    x: &Tensor3<T>,
    p: &HeadParams<T>,
    plan: &DctPlan<T>,
) -> Result<Tensor3<T>> {
    idct3(&mhsa_hat(&dct3(x, plan)?, p)?, plan)
}

/// Normalized values and per-(token, slice) standard deviations.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerNormCache<T = f64> {
    pub normalized: Tensor3<T>,
    /// `rows × 1 × C`.
    pub sigma: Tensor3<T>,
}

/// Slice-wise layer normalization in the DCT domain. The denominator is
/// `σ + ε` with the population standard deviation.
pub fn layernorm_hat_cached<T: Scalar>(
    xh: &Tensor3<T>,
    p: &TLayerNormParams<T>,
) -> Result<(Tensor3<T>, LayerNormCache<T>)> {
    let (n, d, c) = xh.shape();
    if p.gamma.shape() != (1, d, c) || p.beta.shape() != (1, d, c) {
        return Err(Error::shape(
            "t_layernorm",
            format!("input {:?}, gamma {:?}", xh.shape(), p.gamma.shape()),
        ));
    }
    let inv_d = T::one() / T::from_count(d);
    let mut normalized = Tensor3::zeros(n, d, c);
    let mut sigma = Tensor3::zeros(n, 1, c);
    let mut out = Tensor3::zeros(n, d, c);
    let (gamma, beta) = (p.gamma.row(0), p.beta.row(0));
    for i in 0..n {
        let row = xh.row(i);
        for k in 0..c {
            let mut mean = T::zero();
            for j in 0..d {
                mean += row[j * c + k];
            }
            mean *= inv_d;
            let mut var = T::zero();
            for j in 0..d {
                let z = row[j * c + k] - mean;
                var += z * z;
            }
            let sd = (var * inv_d).sqrt();
            sigma[(i, 0, k)] = sd;
            let denom = sd + p.eps;
            for j in 0..d {
                let idx = j * c + k;
                let z = (row[idx] - mean) / denom;
                normalized.row_mut(i)[idx] = z;
                out.row_mut(i)[idx] = gamma[idx] * z + beta[idx];
            }
        }
    }
    Ok((out, LayerNormCache { normalized, sigma }))
}

pub fn layernorm_hat<T: Scalar>(xh: &Tensor3<T>, p: &TLayerNormParams<T>) -> Result<Tensor3<T>> {
    layernorm_hat_cached(xh, p).map(|(y, _)| y)
}

/// Tensor layer normalization.
pub fn t_layernorm<T: Scalar>(
    x: &Tensor3<T>,
    p: &TLayerNormParams<T>,
    plan: &DctPlan<T>,
) -> Result<Tensor3<T>> {
    idct3(&layernorm_hat(&dct3(x, plan)?, p)?, plan)
}

/// Feed-forward cache: DCT-domain input, spatial pre-activation, and the
/// DCT-domain activation fed to the second projection.
#[derive(Clone, Debug, PartialEq)]
pub struct FfnCache<T = f64> {
    pub input: Tensor3<T>,
    pub pre_activation: Tensor3<T>,
    pub activation_hat: Tensor3<T>,
}

/// Feed-forward network on DCT-domain input. The GELU is applied in the
/// spatial domain, so the hidden layer crosses domains once each way.
pub fn ffn_hat_cached<T: Scalar>(
    xh: &Tensor3<T>,
    p1: &TLinearParams<T>,
    p2: &TLinearParams<T>,
    plan: &DctPlan<T>,
) -> Result<(Tensor3<T>, FfnCache<T>)> {
    if p1.d_out() != p2.d_in() {
        return Err(Error::shape(
            "t_ffn",
            format!("hidden widths {} vs {}", p1.d_out(), p2.d_in()),
        ));
    }
    let hidden = linear_hat(xh, p1)?;
    let pre = idct3(&hidden, plan)?;
    let act_hat = dct3(&pre.map(gelu), plan)?;
    let y = linear_hat(&act_hat, p2)?;
    Ok((
        y,
        FfnCache {
            input: xh.clone(),
            pre_activation: pre,
            activation_hat: act_hat,
        },
    ))
}

pub fn ffn_hat<T: Scalar>(
    xh: &Tensor3<T>,
    p1: &TLinearParams<T>,
    p2: &TLinearParams<T>,
    plan: &DctPlan<T>,
) -> Result<Tensor3<T>> {
    ffn_hat_cached(xh, p1, p2, plan).map(|(y, _)| y)
}

/// Tensor feed-forward network `gelu(X ⋆c W₁ + b₁) ⋆c W₂ + b₂`.
pub fn t_ffn<T: Scalar>(
    x: &Tensor3<T>,
    p1: &TLinearParams<T>,
    p2: &TLinearParams<T>,
    plan: &DctPlan<T>,
) -> Result<Tensor3<T>> {
    idct3(&ffn_hat(&dct3(x, plan)?, p1, p2, plan)?, plan)
}
