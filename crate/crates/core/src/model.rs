//! Patch tensorization, parameters, and the encoder forward pass.
//!
//! The c-product encoder (`Variant::Tcp`) keeps each patch as a `P² × C`
//! matrix and runs every block with `C` DCT slices. The standard baseline
//! (`Variant::Std`) flattens patches to `P²·C` features, applies a learned
//! patch projection, and then runs the very same tensor code at `C = 1`,
//! where every transform is the identity.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{
    ffn_hat_cached, layernorm_hat_cached, linear_hat, mhsa_hat_cached, FfnCache, HeadParams,
    LayerNormCache, MhsaCache, TLayerNormParams, TLinearParams,
};
use crate::scalar::Scalar;
use crate::tensor::Tensor3;
use crate::transform::{dct3, idct3, DctPlan};

/// Standard deviation of the truncated-normal weight initialization.
pub const INIT_STD: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// c-product encoder on `N × P² × C` tensors.
    Tcp,
    /// Flattened-patch baseline on `N × P²C × 1` tensors.
    Std,
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Variant::Tcp => "tcp",
            Variant::Std => "std",
        })
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tcp" => Ok(Variant::Tcp),
            "std" => Ok(Variant::Std),
            other => Err(Error::Config(format!("unknown variant `{other}`"))),
        }
    }
}

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub img_h: usize,
    pub img_w: usize,
    /// Image channels `C`.
    pub channels: usize,
    /// Patch side `P`.
    pub patch: usize,
    pub heads: usize,
    pub layers: usize,
    pub r_ff: usize,
    pub num_classes: usize,
    pub variant: Variant,
    pub seed: u64,
}

impl ModelConfig {
    /// 32×32×3 images, `P = 4`, four layers of four heads, `r_ff = 4`, ten classes.
    pub fn cls_paper() -> Self {
        Self {
            img_h: 32,
            img_w: 32,
            channels: 3,
            patch: 4,
            heads: 4,
            layers: 4,
            r_ff: 4,
            num_classes: 10,
            variant: Variant::Tcp,
            seed: 0,
        }
    }

    /// 128×128×3 images, `P = 8`, four layers of four heads, `r_ff = 2`.
    /// Only the encoder is meaningful; the class count is a placeholder for
    /// the (unmodelled) segmentation decoder.
    pub fn seg_paper() -> Self {
        Self {
            img_h: 128,
            img_w: 128,
            channels: 3,
            patch: 8,
            heads: 4,
            layers: 4,
            r_ff: 2,
            num_classes: 2,
            variant: Variant::Tcp,
            seed: 0,
        }
    }

    /// Small configuration used for finite-difference gradient checks.
    pub fn gradcheck() -> Self {
        Self {
            img_h: 8,
            img_w: 8,
            channels: 3,
            patch: 4,
            heads: 2,
            layers: 1,
            r_ff: 2,
            num_classes: 3,
            variant: Variant::Tcp,
            seed: 0,
        }
    }

    pub fn with_variant(&self, variant: Variant) -> Self {
        Self {
            variant,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("img_h", self.img_h),
            ("img_w", self.img_w),
            ("channels", self.channels),
            ("patch", self.patch),
            ("heads", self.heads),
            ("layers", self.layers),
            ("r_ff", self.r_ff),
            ("num_classes", self.num_classes),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("`{name}` must be positive")));
        }
        if !self.img_h.is_multiple_of(self.patch) || !self.img_w.is_multiple_of(self.patch) {
            return Err(Error::Config(format!(
                "image {}x{} is not divisible into {p}x{p} patches",
                self.img_h,
                self.img_w,
                p = self.patch
            )));
        }
        if !self.dim().is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "embedding dimension {} is not divisible by {} heads",
                self.dim(),
                self.heads
            )));
        }
        Ok(())
    }

    /// Number of patches `N`.
    pub fn num_patches(&self) -> usize {
        (self.img_h / self.patch) * (self.img_w / self.patch)
    }

    /// Sequence length including the classification token.
    pub fn tokens(&self) -> usize {
        self.num_patches() + 1
    }

    /// Pixels per patch, `P²`.
    pub fn patch_area(&self) -> usize {
        self.patch * self.patch
    }

    /// Flattened patch size `d_eff = P²·C`.
    pub fn flat_dim(&self) -> usize {
        self.patch_area() * self.channels
    }

    /// Per-slice embedding width: `P²` (tcp) or `P²·C` (std).
    pub fn dim(&self) -> usize {
        match self.variant {
            Variant::Tcp => self.patch_area(),
            Variant::Std => self.flat_dim(),
        }
    }

    /// Number of DCT slices the encoder runs with: `C` (tcp) or 1 (std).
    pub fn slices(&self) -> usize {
        match self.variant {
            Variant::Tcp => self.channels,
            Variant::Std => 1,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.dim() / self.heads
    }

    pub fn ffn_dim(&self) -> usize {
        self.r_ff * self.dim()
    }

    /// Width of the flattened classification-token features, `d·slices`.
    pub fn feature_dim(&self) -> usize {
        self.dim() * self.slices()
    }
}

/// An `height × width × channels` image stored row-major over `(y, x, c)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image<T = f64> {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Image<T> {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::shape(
                "Image::new",
                format!("{} values for {height}x{width}x{channels}", data.len()),
            ));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![T::zero(); height * width * channels],
        }
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> T {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: T) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }
}

/// Splits an image into non-overlapping `P × P` patches.
///
/// Mode 1 walks the patch grid row-major, mode 2 walks the pixels of a patch
/// row-major, mode 3 is the image channel.
pub fn patchify<T: Scalar>(image: &Image<T>, config: &ModelConfig) -> Result<Tensor3<T>> {
    if image.height != config.img_h
        || image.width != config.img_w
        || image.channels != config.channels
    {
        return Err(Error::shape(
            "patchify",
            format!(
                "image {}x{}x{} vs config {}x{}x{}",
                image.height,
                image.width,
                image.channels,
                config.img_h,
                config.img_w,
                config.channels
            ),
        ));
    }
    let p = config.patch;
    let grid_w = config.img_w / p;
    Ok(Tensor3::from_fn(
        config.num_patches(),
        config.patch_area(),
        config.channels,
        |n, j, k| {
            let (py, px) = (n / grid_w, n % grid_w);
            let (dy, dx) = (j / p, j % p);
            image.get(py * p + dy, px * p + dx, k)
        },
    ))
}

/// Inverse of [`patchify`].
pub fn unpatchify<T: Scalar>(patches: &Tensor3<T>, config: &ModelConfig) -> Result<Image<T>> {
    if patches.shape() != (config.num_patches(), config.patch_area(), config.channels) {
        return Err(Error::shape(
            "unpatchify",
            format!("tensor {:?} does not match config", patches.shape()),
        ));
    }
    let p = config.patch;
    let grid_w = config.img_w / p;
    let mut img = Image::zeros(config.img_h, config.img_w, config.channels);
    for n in 0..config.num_patches() {
        let (py, px) = (n / grid_w, n % grid_w);
        for j in 0..config.patch_area() {
            for k in 0..config.channels {
                img.set(py * p + j / p, px * p + j % p, k, patches[(n, j, k)]);
            }
        }
    }
    Ok(img)
}

/// Parameters of one encoder block.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockParams<T = f64> {
    pub ln1: TLayerNormParams<T>,
    pub attn: HeadParams<T>,
    pub ln2: TLayerNormParams<T>,
    pub ffn1: TLinearParams<T>,
    pub ffn2: TLinearParams<T>,
}

impl<T: Scalar> BlockParams<T> {
    pub fn zeros(d: usize, heads: usize, d_ff: usize, chans: usize) -> Result<Self> {
        Ok(Self {
            ln1: TLayerNormParams::new(d, chans),
            attn: HeadParams::zeros(d, heads, chans)?,
            ln2: TLayerNormParams::new(d, chans),
            ffn1: TLinearParams::zeros(d, d_ff, chans),
            ffn2: TLinearParams::zeros(d_ff, d, chans),
        })
    }
}

/// Every learnable tensor of an encoder plus embeddings and head.
///
/// `cls` and `pos` live in the spatial domain (they are added to spatial
/// patches); block weights live in the DCT domain. The head is an ordinary
/// matrix stored as a `(d·slices) × classes × 1` tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams<T = f64> {
    pub cls: Tensor3<T>,
    pub pos: Tensor3<T>,
    /// Std variant only: `d_eff × d_eff` projection at `C = 1`.
    pub patch_proj: Option<TLinearParams<T>>,
    pub blocks: Vec<BlockParams<T>>,
    pub final_ln: TLayerNormParams<T>,
    pub head_w: Tensor3<T>,
    pub head_b: Tensor3<T>,
}

macro_rules! visit_tensors {
    ($params:expr, $out:ident, $($ref_kw:tt)+) => {{
        let p = $params;
        $out.push(("cls".to_string(), $($ref_kw)+ p.cls));
        $out.push(("pos".to_string(), $($ref_kw)+ p.pos));
        if let Some(proj) = $($ref_kw)+ p.patch_proj {
            $out.push(("patch_proj.w".to_string(), $($ref_kw)+ proj.w));
            $out.push(("patch_proj.b".to_string(), $($ref_kw)+ proj.b));
        }
        for (l, block) in ($($ref_kw)+ p.blocks).iter_one().enumerate() {
            let pre = format!("blocks.{l}");
            $out.push((format!("{pre}.ln1.gamma"), $($ref_kw)+ block.ln1.gamma));
            $out.push((format!("{pre}.ln1.beta"), $($ref_kw)+ block.ln1.beta));
            for (role, list) in [
                ("query", $($ref_kw)+ block.attn.query),
                ("key", $($ref_kw)+ block.attn.key),
                ("value", $($ref_kw)+ block.attn.value),
            ] {
                for (h, lin) in list.iter_one().enumerate() {
                    $out.push((format!("{pre}.attn.{role}.{h}.w"), $($ref_kw)+ lin.w));
                    $out.push((format!("{pre}.attn.{role}.{h}.b"), $($ref_kw)+ lin.b));
                }
            }
            $out.push((format!("{pre}.attn.output.w"), $($ref_kw)+ block.attn.output.w));
            $out.push((format!("{pre}.attn.output.b"), $($ref_kw)+ block.attn.output.b));
            $out.push((format!("{pre}.ln2.gamma"), $($ref_kw)+ block.ln2.gamma));
            $out.push((format!("{pre}.ln2.beta"), $($ref_kw)+ block.ln2.beta));
            $out.push((format!("{pre}.ffn1.w"), $($ref_kw)+ block.ffn1.w));
            $out.push((format!("{pre}.ffn1.b"), $($ref_kw)+ block.ffn1.b));
            $out.push((format!("{pre}.ffn2.w"), $($ref_kw)+ block.ffn2.w));
            $out.push((format!("{pre}.ffn2.b"), $($ref_kw)+ block.ffn2.b));
        }
        $out.push(("final_ln.gamma".to_string(), $($ref_kw)+ p.final_ln.gamma));
        $out.push(("final_ln.beta".to_string(), $($ref_kw)+ p.final_ln.beta));
        $out.push(("head.w".to_string(), $($ref_kw)+ p.head_w));
        $out.push(("head.b".to_string(), $($ref_kw)+ p.head_b));
    }};
}

/// `iter` / `iter_mut` chosen by the receiver's mutability inside
/// `visit_tensors!`.
trait IterOne<'a> {
    type Iter;
    fn iter_one(self) -> Self::Iter;
}

impl<'a, X: 'a> IterOne<'a> for &'a Vec<X> {
    type Iter = std::slice::Iter<'a, X>;
    fn iter_one(self) -> Self::Iter {
        self.iter()
    }
}

impl<'a, X: 'a> IterOne<'a> for &'a mut Vec<X> {
    type Iter = std::slice::IterMut<'a, X>;
    fn iter_one(self) -> Self::Iter {
        self.iter_mut()
    }
}

impl<T: Scalar> EncoderParams<T> {
    /// Parameters with every weight, bias and embedding zero and `γ = 1`.
    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let (d, c) = (config.dim(), config.slices());
        let blocks = (0..config.layers)
            .map(|_| BlockParams::zeros(d, config.heads, config.ffn_dim(), c))
            .collect::<Result<Vec<_>>>()?;
        let patch_proj = match config.variant {
            Variant::Tcp => None,
            Variant::Std => Some(TLinearParams::zeros(d, d, 1)),
        };
        Ok(Self {
            cls: Tensor3::zeros(1, d, c),
            pos: Tensor3::zeros(config.tokens(), d, c),
            patch_proj,
            blocks,
            final_ln: TLayerNormParams::new(d, c),
            head_w: Tensor3::zeros(config.feature_dim(), config.num_classes, 1),
            head_b: Tensor3::zeros(1, config.num_classes, 1),
        })
    }

    /// Same structure with every value zero (including `γ`); used as a
    /// gradient accumulator and for optimizer moments.
    pub fn zeros_like(&self) -> Self {
        let mut out = self.clone();
        for (_, t) in out.tensors_mut() {
            t.fill(T::zero());
        }
        out
    }

    /// Every learnable tensor in canonical order with a stable name.
    pub fn tensors(&self) -> Vec<(String, &Tensor3<T>)> {
        let mut out = Vec::new();
        visit_tensors!(self, out, &);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor3<T>)> {
        let mut out = Vec::new();
        visit_tensors!(self, out, &mut);
        out
    }

    /// Total number of learnable scalars.
    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// `self += alpha * other`, tensor by tensor.
    pub fn axpy(&mut self, alpha: T, other: &Self) -> Result<()> {
        let src = other.tensors();
        let mut dst = self.tensors_mut();
        if src.len() != dst.len() {
            return Err(Error::shape("EncoderParams::axpy", "structure mismatch"));
        }
        for ((_, d), (_, s)) in dst.iter_mut().zip(&src) {
            d.axpy(alpha, s)?;
        }
        Ok(())
    }

    pub fn scale_in_place(&mut self, s: T) {
        for (_, t) in self.tensors_mut() {
            t.as_mut_slice().iter_mut().for_each(|v| *v *= s);
        }
    }

    pub fn sum_squares(&self) -> T {
        self.tensors()
            .iter()
            .fold(T::zero(), |acc, (_, t)| acc + t.sum_squares())
    }

    pub fn cast<U: Scalar>(&self) -> EncoderParams<U> {
        let lin = |p: &TLinearParams<T>| TLinearParams {
            w: p.w.cast(),
            b: p.b.cast(),
        };
        let ln = |p: &TLayerNormParams<T>| TLayerNormParams {
            gamma: p.gamma.cast(),
            beta: p.beta.cast(),
            eps: U::of(p.eps.as_f64()),
        };
        EncoderParams {
            cls: self.cls.cast(),
            pos: self.pos.cast(),
            patch_proj: self.patch_proj.as_ref().map(lin),
            blocks: self
                .blocks
                .iter()
                .map(|b| BlockParams {
                    ln1: ln(&b.ln1),
                    attn: HeadParams {
                        query: b.attn.query.iter().map(lin).collect(),
                        key: b.attn.key.iter().map(lin).collect(),
                        value: b.attn.value.iter().map(lin).collect(),
                        output: lin(&b.attn.output),
                    },
                    ln2: ln(&b.ln2),
                    ffn1: lin(&b.ffn1),
                    ffn2: lin(&b.ffn2),
                })
                .collect(),
            final_ln: ln(&self.final_ln),
            head_w: self.head_w.cast(),
            head_b: self.head_b.cast(),
        }
    }
}

fn is_weight(name: &str) -> bool {
    name.ends_with(".w")
}

/// Deterministic initialization.
///
/// Weights (every tensor whose name ends in `.w`, visited in
/// [`EncoderParams::tensors`] order, values in storage order) are drawn from
/// a normal with standard deviation [`INIT_STD`] truncated to ±2σ, using a
/// ChaCha8 stream seeded with `seed`. Biases, `cls`, `pos` and `β` are zero;
/// `γ` is one.
pub fn init_params<T: Scalar>(config: &ModelConfig, seed: u64) -> Result<EncoderParams<T>> {
    let mut params = EncoderParams::zeros(config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, INIT_STD).expect("valid normal parameters");
    for (name, tensor) in params.tensors_mut() {
        if !is_weight(&name) {
            continue;
        }
        for v in tensor.as_mut_slice() {
            let draw = loop {
                let x: f64 = normal.sample(&mut rng);
                if x.abs() <= 2.0 * INIT_STD {
                    break x;
                }
            };
            *v = T::of(draw);
        }
    }
    Ok(params)
}

fn check_params<T: Scalar>(params: &EncoderParams<T>, config: &ModelConfig) -> Result<()> {
    let (d, c) = (config.dim(), config.slices());
    let ok = params.cls.shape() == (1, d, c)
        && params.pos.shape() == (config.tokens(), d, c)
        && params.blocks.len() == config.layers
        && params.head_w.shape() == (config.feature_dim(), config.num_classes, 1)
        && params.head_b.shape() == (1, config.num_classes, 1)
        && params.patch_proj.is_some() == (config.variant == Variant::Std);
    if ok {
        Ok(())
    } else {
        Err(Error::shape(
            "encoder",
            "parameters do not match the model configuration",
        ))
    }
}

/// Token embedding of the patches (before `cls`/`pos`): the identity for
/// the tcp variant, the learned projection on flattened patches for std.
pub fn embed_patches<T: Scalar>(
    patches: &Tensor3<T>,
    params: &EncoderParams<T>,
    config: &ModelConfig,
) -> Result<Tensor3<T>> {
    match (&params.patch_proj, config.variant) {
        (None, Variant::Tcp) => Ok(patches.clone()),
        (Some(proj), Variant::Std) => {
            let flat = patches
                .clone()
                .reshape(patches.rows(), config.flat_dim(), 1)?;
            linear_hat(&flat, proj)
        }
        _ => Err(Error::shape(
            "embed",
            "patch projection presence does not match variant",
        )),
    }
}

/// Prepends the classification tensor along mode 1 and adds positions.
pub fn embed<T: Scalar>(
    patches: &Tensor3<T>,
    params: &EncoderParams<T>,
    config: &ModelConfig,
) -> Result<Tensor3<T>> {
    let tokens = embed_patches(patches, params, config)?;
    let x = Tensor3::concat_rows(&[&params.cls, &tokens])?;
    x.add(&params.pos)
}

/// Activations recorded by one block for its backward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockCache<T = f64> {
    pub ln1: LayerNormCache<T>,
    pub attn: MhsaCache<T>,
    pub ln2: LayerNormCache<T>,
    pub ffn: FfnCache<T>,
}

/// One pre-norm block on DCT-domain activations. The residual additions are
/// done in the DCT domain.
pub fn block_forward_hat_cached<T: Scalar>(
    xh: &Tensor3<T>,
    block: &BlockParams<T>,
    plan: &DctPlan<T>,
) -> Result<(Tensor3<T>, BlockCache<T>)> {
    let (a1, ln1) = layernorm_hat_cached(xh, &block.ln1)?;
    let (m, attn) = mhsa_hat_cached(&a1, &block.attn)?;
    let y = xh.add(&m)?;
    let (a2, ln2) = layernorm_hat_cached(&y, &block.ln2)?;
    let (f, ffn) = ffn_hat_cached(&a2, &block.ffn1, &block.ffn2, plan)?;
    let out = y.add(&f)?;
    Ok((
        out,
        BlockCache {
            ln1,
            attn,
            ln2,
            ffn,
        },
    ))
}

/// One block on spatial-domain activations.
pub fn block_forward<T: Scalar>(
    x: &Tensor3<T>,
    block: &BlockParams<T>,
    plan: &DctPlan<T>,
) -> Result<Tensor3<T>> {
    let (yh, _) = block_forward_hat_cached(&dct3(x, plan)?, block, plan)?;
    idct3(&yh, plan)
}

/// Everything recorded by a full forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardTrace<T = f64> {
    pub patches: Tensor3<T>,
    pub blocks: Vec<BlockCache<T>>,
    pub final_ln: LayerNormCache<T>,
    /// Flattened spatial classification-token features fed to the head.
    pub features: Vec<T>,
    pub logits: Vec<T>,
}

/// Builds the DCT plan an encoder with this configuration runs with.
pub fn plan_for<T: Scalar>(config: &ModelConfig) -> Result<DctPlan<T>> {
    DctPlan::new(config.slices())
}

pub(crate) fn forward_trace<T: Scalar>(
    image: &Image<T>,
    params: &EncoderParams<T>,
    config: &ModelConfig,
    plan: &DctPlan<T>,
) -> Result<ForwardTrace<T>> {
    config.validate()?;
    check_params(params, config)?;
    let patches = patchify(image, config)?;
    let x0 = embed(&patches, params, config)?;
    let mut xh = dct3(&x0, plan)?;
    let mut caches = Vec::with_capacity(params.blocks.len());
    for block in &params.blocks {
        let (next, cache) = block_forward_hat_cached(&xh, block, plan)?;
        xh = next;
        caches.push(cache);
    }
    let (normed, final_ln) = layernorm_hat_cached(&xh, &params.final_ln)?;
    let cls_row = idct3(&normed.row_block(0, 1)?, plan)?;
    let features = cls_row.into_vec();
    let logits = head_forward(&features, &params.head_w, &params.head_b);
    Ok(ForwardTrace {
        patches,
        blocks: caches,
        final_ln,
        features,
        logits,
    })
}

fn head_forward<T: Scalar>(features: &[T], w: &Tensor3<T>, b: &Tensor3<T>) -> Vec<T> {
    let classes = w.cols();
    let mut logits: Vec<T> = b.as_slice().to_vec();
    for (r, &z) in features.iter().enumerate() {
        let row = w.row(r);
        for c in 0..classes {
            logits[c] += z * row[c];
        }
    }
    logits
}

/// Full forward pass: patchify, embed, `L` blocks, final normalization,
/// classification token, linear head. Returns the logits.
pub fn encoder_forward<T: Scalar>(
    image: &Image<T>,
    params: &EncoderParams<T>,
    config: &ModelConfig,
) -> Result<Vec<T>> {
    let plan = plan_for(config)?;
    forward_trace(image, params, config, &plan).map(|t| t.logits)
}
