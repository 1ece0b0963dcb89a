//! Tensor cosine-product algebra and the c-product vision transformer.
//!
//! Third-order tensors `rows × cols × chans` are multiplied by transforming
//! every tube with an orthonormal DCT-II, multiplying the frontal slices as
//! matrices, and transforming back. Replacing every matrix product of a
//! vision transformer with this product gives an encoder whose weight count
//! shrinks by exactly the channel factor.
//!
//! All numeric code is generic over [`Scalar`]; the aliases at the bottom of
//! this file fix it to `f64`, the precision the test tolerances assume.

#![allow(clippy::needless_range_loop)]

pub mod analysis;
pub mod checkpoint;
pub mod config;
pub mod ctensor;
pub mod data;
pub mod error;
pub mod grad;
pub mod layers;
pub mod model;
pub mod scalar;
pub mod selfcheck;
pub mod tensor;
pub mod transform;

pub use error::{Error, Result};
pub use model::{encoder_forward, init_params, EncoderParams, Image, ModelConfig, Variant};
pub use scalar::Scalar;
pub use tensor::Tensor3;
pub use transform::{build_dct_plan, dct3, idct3, DctPlan};

/// Double-precision tensor.
pub type Tensor = Tensor3<f64>;
/// Double-precision DCT plan.
pub type Plan = DctPlan<f64>;
/// Double-precision encoder parameters.
pub type Params = EncoderParams<f64>;
