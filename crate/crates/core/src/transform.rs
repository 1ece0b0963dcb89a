//! Orthogonal DCT-II along the third mode of a tensor.
//!
//! The transform is applied as a dense `C × C` matrix on every tube. Channel
//! counts are small (one to a handful), so the direct product is both the
//! simplest and the most accurate choice.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor3;

/// Precomputed orthonormal DCT-II matrix `Φ` (row = frequency, column =
/// position) together with its transpose.
#[derive(Clone, Debug, PartialEq)]
pub struct DctPlan<T = f64> {
    size: usize,
    forward: Vec<T>,
    inverse: Vec<T>,
}

/// Builds the orthonormal DCT-II plan of length `c`.
pub fn build_dct_plan<T: Scalar>(c: usize) -> Result<DctPlan<T>> {
    DctPlan::new(c)
}

impl<T: Scalar> DctPlan<T> {
    pub fn new(size: usize) -> Result<Self> {
        if size == 0 {
            return Err(Error::InvalidDimension(
                "DCT length must be at least 1".into(),
            ));
        }
        let n = T::from_count(size);
        let dc = (T::one() / n).sqrt();
        let ac = (T::of(2.0) / n).sqrt();
        let mut forward = vec![T::zero(); size * size];
        for j in 0..size {
            for k in 0..size {
                forward[j * size + k] = if j == 0 {
                    dc
                } else {
                    let arg = T::PI() * T::from_count((2 * k + 1) * j) / (T::of(2.0) * n);
                    ac * arg.cos()
                };
            }
        }
        let inverse = transpose(&forward, size);
        Ok(Self {
            size,
            forward,
            inverse,
        })
    }

    #[inline]
    pub fn size(&self) -> usize {
        self.size
    }

    /// Row-major `Φ`.
    pub fn forward(&self) -> &[T] {
        &self.forward
    }

    /// Row-major `Φᵀ`.
    pub fn inverse(&self) -> &[T] {
        &self.inverse
    }

    /// `Φ[j][k]`.
    pub fn entry(&self, j: usize, k: usize) -> T {
        self.forward[j * self.size + k]
    }

    /// Largest entry of `|ΦᵀΦ − I|`.
    pub fn orthogonality_error(&self) -> T {
        let c = self.size;
        let mut worst = T::zero();
        for a in 0..c {
            for b in 0..c {
                let mut s = T::zero();
                for j in 0..c {
                    s += self.forward[j * c + a] * self.forward[j * c + b];
                }
                let target = if a == b { T::one() } else { T::zero() };
                worst = worst.max((s - target).abs());
            }
        }
        worst
    }

    /// Copy of the plan with `eps` added to `Φ[0][0]`; used to exercise the
    /// self-check failure path.
    #[doc(hidden)]
    pub fn perturbed(&self, eps: T) -> Self {
        let mut out = self.clone();
        out.forward[0] += eps;
        out.inverse = transpose(&out.forward, self.size);
        out
    }

    fn check(&self, x: &Tensor3<T>, op: &'static str) -> Result<()> {
        if x.chans() != self.size {
            return Err(Error::Channels {
                op,
                expected: self.size,
                got: x.chans(),
            });
        }
        Ok(())
    }
}

fn transpose<T: Scalar>(m: &[T], n: usize) -> Vec<T> {
    let mut t = vec![T::zero(); n * n];
    for r in 0..n {
        for c in 0..n {
            t[c * n + r] = m[r * n + c];
        }
    }
    t
}

/// Multiplies every tube by the row-major `c × c` matrix `m`.
fn mode3<T: Scalar>(x: &Tensor3<T>, m: &[T]) -> Tensor3<T> {
    let c = x.chans();
    let mut out = Tensor3::zeros(x.rows(), x.cols(), c);
    for (src, dst) in x
        .as_slice()
        .chunks_exact(c)
        .zip(out.as_mut_slice().chunks_exact_mut(c))
    {
        for (k, d) in dst.iter_mut().enumerate() {
            let row = &m[k * c..(k + 1) * c];
            let mut s = T::zero();
            for (&a, &b) in row.iter().zip(src) {
                s += a * b;
            }
            *d = s;
        }
    }
    out
}

/// Forward transform: every tube `x` becomes `Φ x`.
pub fn dct3<T: Scalar>(x: &Tensor3<T>, plan: &DctPlan<T>) -> Result<Tensor3<T>> {
    plan.check(x, "dct3")?;
    Ok(mode3(x, &plan.forward))
}

/// Inverse transform: every tube `y` becomes `Φᵀ y`.
pub fn idct3<T: Scalar>(xhat: &Tensor3<T>, plan: &DctPlan<T>) -> Result<Tensor3<T>> {
    plan.check(xhat, "idct3")?;
    Ok(mode3(xhat, &plan.inverse))
}
