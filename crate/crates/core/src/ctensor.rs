//! The cosine-product (c-product) algebra on third-order tensors.
//!
//! Every operation here is "transform, act on each frontal slice as a
//! matrix, transform back". The `*_hat` kernels and the `slice_*` helpers
//! work on tensors that are already in the DCT domain and are what the
//! encoder uses directly.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor3;
use crate::transform::{dct3, idct3, DctPlan};

/// Default absolute tolerance for the f-structure predicates.
pub const DEFAULT_PREDICATE_TOL: f64 = 1e-10;

/// Relative pivot threshold below which a slice is declared singular.
pub const PIVOT_THRESHOLD: f64 = 1e-12;

fn check_chans<T: Scalar>(a: &Tensor3<T>, b: &Tensor3<T>, op: &'static str) -> Result<()> {
    if a.chans() != b.chans() {
        return Err(Error::Channels {
            op,
            expected: a.chans(),
            got: b.chans(),
        });
    }
    Ok(())
}

fn check_plan<T: Scalar>(a: &Tensor3<T>, plan: &DctPlan<T>, op: &'static str) -> Result<()> {
    if a.chans() != plan.size() {
        return Err(Error::Channels {
            op,
            expected: plan.size(),
            got: a.chans(),
        });
    }
    Ok(())
}

fn check_square<T: Scalar>(a: &Tensor3<T>, op: &'static str) -> Result<()> {
    if a.rows() != a.cols() {
        return Err(Error::shape(
            op,
            format!("expected square slices, got {}x{}", a.rows(), a.cols()),
        ));
    }
    Ok(())
}

/// `out[j][k] += a[k] · b[j][k]` over consecutive tubes.
#[inline(always)]
fn tube_axpy<T: Scalar, const C: usize>(out: &mut [T], a: &[T], b: &[T]) {
    let a: &[T; C] = a.try_into().expect("tube length");
    for (o, bt) in out.chunks_exact_mut(C).zip(b.chunks_exact(C)) {
        for k in 0..C {
            o[k] += a[k] * bt[k];
        }
    }
}

fn tube_axpy_dyn<T: Scalar>(out: &mut [T], a: &[T], b: &[T]) {
    let c = a.len();
    for (o, bt) in out.chunks_exact_mut(c).zip(b.chunks_exact(c)) {
        for k in 0..c {
            o[k] += a[k] * bt[k];
        }
    }
}

/// `out[k] = Σ_j a[j][k] · b[j][k]`.
#[inline(always)]
fn tube_dot<T: Scalar, const C: usize>(out: &mut [T], a: &[T], b: &[T]) {
    let mut acc = [T::zero(); C];
    for (at, bt) in a.chunks_exact(C).zip(b.chunks_exact(C)) {
        for k in 0..C {
            acc[k] += at[k] * bt[k];
        }
    }
    out.copy_from_slice(&acc);
}

fn tube_dot_dyn<T: Scalar>(out: &mut [T], a: &[T], b: &[T]) {
    let c = out.len();
    out.iter_mut().for_each(|v| *v = T::zero());
    for (at, bt) in a.chunks_exact(c).zip(b.chunks_exact(c)) {
        for k in 0..c {
            out[k] += at[k] * bt[k];
        }
    }
}

/// Picks a fixed-width kernel for the common small channel counts.
macro_rules! by_chans {
    ($c:expr, $fixed:ident, $dynamic:ident, $($arg:expr),*) => {
        match $c {
            1 => $fixed::<T, 1>($($arg),*),
            2 => $fixed::<T, 2>($($arg),*),
            3 => $fixed::<T, 3>($($arg),*),
            4 => $fixed::<T, 4>($($arg),*),
            _ => $dynamic($($arg),*),
        }
    };
}

/// Slice-wise `A⁽ᵏ⁾ · B⁽ᵏ⁾` for `A: m×n×C`, `B: n×ℓ×C`.
pub fn slice_matmul<T: Scalar>(a: &Tensor3<T>, b: &Tensor3<T>) -> Result<Tensor3<T>> {
    check_chans(a, b, "slice_matmul")?;
    if a.cols() != b.rows() {
        return Err(Error::shape(
            "slice_matmul",
            format!("inner dims {} vs {}", a.cols(), b.rows()),
        ));
    }
    let c = a.chans();
    let mut out = Tensor3::zeros(a.rows(), b.cols(), c);
    for i in 0..a.rows() {
        let out_row = out.row_mut(i);
        for l in 0..a.cols() {
            by_chans!(c, tube_axpy, tube_axpy_dyn, out_row, a.tube(i, l), b.row(l));
        }
    }
    Ok(out)
}

/// Slice-wise `A⁽ᵏ⁾ · (B⁽ᵏ⁾)ᵀ` for `A: m×n×C`, `B: ℓ×n×C`.
pub fn slice_matmul_nt<T: Scalar>(a: &Tensor3<T>, b: &Tensor3<T>) -> Result<Tensor3<T>> {
    check_chans(a, b, "slice_matmul_nt")?;
    if a.cols() != b.cols() {
        return Err(Error::shape(
            "slice_matmul_nt",
            format!("inner dims {} vs {}", a.cols(), b.cols()),
        ));
    }
    let c = a.chans();
    let mut out = Tensor3::zeros(a.rows(), b.rows(), c);
    for i in 0..a.rows() {
        let a_row = a.row(i);
        let out_row = out.row_mut(i);
        for j in 0..b.rows() {
            let o = &mut out_row[j * c..(j + 1) * c];
            by_chans!(c, tube_dot, tube_dot_dyn, o, a_row, b.row(j));
        }
    }
    Ok(out)
}

/// Slice-wise `(A⁽ᵏ⁾)ᵀ · B⁽ᵏ⁾` for `A: n×m×C`, `B: n×ℓ×C`.
pub fn slice_matmul_tn<T: Scalar>(a: &Tensor3<T>, b: &Tensor3<T>) -> Result<Tensor3<T>> {
    check_chans(a, b, "slice_matmul_tn")?;
    if a.rows() != b.rows() {
        return Err(Error::shape(
            "slice_matmul_tn",
            format!("inner dims {} vs {}", a.rows(), b.rows()),
        ));
    }
    let c = a.chans();
    let mut out = Tensor3::zeros(a.cols(), b.cols(), c);
    for l in 0..a.rows() {
        let b_row = b.row(l);
        for i in 0..a.cols() {
            by_chans!(
                c,
                tube_axpy,
                tube_axpy_dyn,
                out.row_mut(i),
                a.tube(l, i),
                b_row
            );
        }
    }
    Ok(out)
}

/// Transposes every frontal slice (no transform).
pub fn slice_transpose<T: Scalar>(a: &Tensor3<T>) -> Tensor3<T> {
    Tensor3::from_fn(a.cols(), a.rows(), a.chans(), |i, j, k| a[(j, i, k)])
}

/// Slice-wise product of two DCT-domain tensors.
pub fn cprod_hat<T: Scalar>(ahat: &Tensor3<T>, bhat: &Tensor3<T>) -> Result<Tensor3<T>> {
    slice_matmul(ahat, bhat)
}

/// The c-product `A ⋆c B = idct3(dct3(A) · dct3(B))`.
pub fn cprod<T: Scalar>(a: &Tensor3<T>, b: &Tensor3<T>, plan: &DctPlan<T>) -> Result<Tensor3<T>> {
    check_chans(a, b, "cprod")?;
    check_plan(a, plan, "cprod")?;
    if a.cols() != b.rows() {
        return Err(Error::shape(
            "cprod",
            format!("inner dims {} vs {}", a.cols(), b.rows()),
        ));
    }
    let prod = cprod_hat(&dct3(a, plan)?, &dct3(b, plan)?)?;
    idct3(&prod, plan)
}

/// The c-transpose: transposes each DCT-domain slice.
pub fn ctranspose<T: Scalar>(a: &Tensor3<T>, plan: &DctPlan<T>) -> Result<Tensor3<T>> {
    check_plan(a, plan, "ctranspose")?;
    idct3(&slice_transpose(&dct3(a, plan)?), plan)
}

/// `m × m × C` tensor whose DCT-domain slices are all `I_m`.
pub fn identity_hat<T: Scalar>(m: usize, c: usize) -> Tensor3<T> {
    Tensor3::from_fn(m, m, c, |i, j, _| if i == j { T::one() } else { T::zero() })
}

/// The ⋆c identity `ℐ_{m,C}`.
///
/// Defined through its DCT-domain slices (all equal to `I_m`); in the spatial
/// domain every diagonal tube is `Φᵀ·1`, which is `√C·e₀`.
pub fn identity_tensor<T: Scalar>(m: usize, c: usize, plan: &DctPlan<T>) -> Result<Tensor3<T>> {
    if m == 0 || c == 0 {
        return Err(Error::InvalidDimension(format!(
            "identity tensor needs positive sizes, got m={m}, C={c}"
        )));
    }
    if plan.size() != c {
        return Err(Error::Channels {
            op: "identity_tensor",
            expected: plan.size(),
            got: c,
        });
    }
    idct3(&identity_hat(m, c), plan)
}

/// Inverts a dense row-major `m × m` matrix by LU with partial pivoting.
/// Returns `None` when a pivot falls below `threshold`.
fn invert_matrix<T: Scalar>(a: &[T], m: usize, threshold: T) -> Option<Vec<T>> {
    let mut lu = a.to_vec();
    let mut perm: Vec<usize> = (0..m).collect();
    for col in 0..m {
        let (pivot_row, pivot_abs) = (col..m).map(|r| (r, lu[r * m + col].abs())).fold(
            (col, T::neg_infinity()),
            |best, cur| {
                if cur.1 > best.1 {
                    cur
                } else {
                    best
                }
            },
        );
        // Written negated so that a NaN pivot is rejected too.
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !(pivot_abs >= threshold) || pivot_abs == T::zero() {
            return None;
        }
        if pivot_row != col {
            for j in 0..m {
                lu.swap(col * m + j, pivot_row * m + j);
            }
            perm.swap(col, pivot_row);
        }
        let p = lu[col * m + col];
        for r in col + 1..m {
            let f = lu[r * m + col] / p;
            lu[r * m + col] = f;
            for j in col + 1..m {
                let v = lu[col * m + j];
                lu[r * m + j] -= f * v;
            }
        }
    }
    // Solve LU x = P e_j for each column j.
    let mut inv = vec![T::zero(); m * m];
    let mut x = vec![T::zero(); m];
    for j in 0..m {
        for i in 0..m {
            let mut s = if perm[i] == j { T::one() } else { T::zero() };
            for l in 0..i {
                s -= lu[i * m + l] * x[l];
            }
            x[i] = s;
        }
        for i in (0..m).rev() {
            let mut s = x[i];
            for l in i + 1..m {
                s -= lu[i * m + l] * x[l];
            }
            x[i] = s / lu[i * m + i];
        }
        for i in 0..m {
            inv[i * m + j] = x[i];
        }
    }
    Some(inv)
}

/// Slice-wise inverse of a DCT-domain tensor.
pub fn cinv_hat<T: Scalar>(ahat: &Tensor3<T>) -> Result<Tensor3<T>> {
    check_square(ahat, "cinv")?;
    let m = ahat.rows();
    let mut slices = Vec::with_capacity(ahat.chans());
    for k in 0..ahat.chans() {
        let s = ahat.frontal_slice(k);
        let scale = s.iter().fold(T::zero(), |acc, v| acc.max(v.abs()));
        let inv = invert_matrix(&s, m, T::of(PIVOT_THRESHOLD) * scale)
            .ok_or(Error::SingularSlice { slice: k })?;
        slices.push(inv);
    }
    Tensor3::from_slices(m, m, &slices)
}

/// The ⋆c inverse: `A ⋆c cinv(A) = ℐ`.
pub fn cinv<T: Scalar>(a: &Tensor3<T>, plan: &DctPlan<T>) -> Result<Tensor3<T>> {
    check_plan(a, plan, "cinv")?;
    idct3(&cinv_hat(&dct3(a, plan)?)?, plan)
}

fn square_hat<T: Scalar>(
    a: &Tensor3<T>,
    plan: &DctPlan<T>,
    op: &'static str,
) -> Result<Tensor3<T>> {
    check_square(a, op)?;
    check_plan(a, plan, op)?;
    dct3(a, plan)
}

/// Every DCT-domain slice is diagonal up to `tol`.
pub fn is_f_diagonal<T: Scalar>(a: &Tensor3<T>, plan: &DctPlan<T>, tol: T) -> Result<bool> {
    let h = square_hat(a, plan, "is_f_diagonal")?;
    let m = h.rows();
    Ok((0..m).all(|i| (0..m).all(|j| i == j || h.tube(i, j).iter().all(|v| v.abs() <= tol))))
}

fn hat_is_symmetric<T: Scalar>(h: &Tensor3<T>, tol: T) -> bool {
    let m = h.rows();
    (0..m).all(|i| {
        (i + 1..m).all(|j| {
            h.tube(i, j)
                .iter()
                .zip(h.tube(j, i))
                .all(|(&x, &y)| (x - y).abs() <= tol)
        })
    })
}

/// Every DCT-domain slice is symmetric up to `tol`.
pub fn is_f_symmetric<T: Scalar>(a: &Tensor3<T>, plan: &DctPlan<T>, tol: T) -> Result<bool> {
    let h = square_hat(a, plan, "is_f_symmetric")?;
    Ok(hat_is_symmetric(&h, tol))
}

/// Every DCT-domain slice `Q` satisfies `QᵀQ = QQᵀ = I` up to `tol`.
pub fn is_f_orthogonal<T: Scalar>(a: &Tensor3<T>, plan: &DctPlan<T>, tol: T) -> Result<bool> {
    let h = square_hat(a, plan, "is_f_orthogonal")?;
    let eye = identity_hat::<T>(h.rows(), h.chans());
    let qtq = slice_matmul_tn(&h, &h)?;
    let qqt = slice_matmul_nt(&h, &h)?;
    let worst = qtq
        .max_abs_diff(&eye)
        .unwrap()
        .max(qqt.max_abs_diff(&eye).unwrap());
    Ok(worst <= tol)
}

fn cholesky_succeeds<T: Scalar>(s: &[T], m: usize) -> bool {
    let mut l = vec![T::zero(); m * m];
    for j in 0..m {
        let mut d = s[j * m + j];
        for p in 0..j {
            d -= l[j * m + p] * l[j * m + p];
        }
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !(d > T::zero()) {
            return false;
        }
        let d = d.sqrt();
        l[j * m + j] = d;
        for i in j + 1..m {
            let mut v = s[i * m + j];
            for p in 0..j {
                v -= l[i * m + p] * l[j * m + p];
            }
            l[i * m + j] = v / d;
        }
    }
    true
}

/// Every DCT-domain slice is symmetric positive definite. Symmetry is
/// checked at [`DEFAULT_PREDICATE_TOL`]; definiteness by Cholesky.
pub fn is_f_positive_definite<T: Scalar>(a: &Tensor3<T>, plan: &DctPlan<T>) -> Result<bool> {
    let h = square_hat(a, plan, "is_f_positive_definite")?;
    if !hat_is_symmetric(&h, T::of(DEFAULT_PREDICATE_TOL)) {
        return Ok(false);
    }
    let m = h.rows();
    Ok((0..h.chans()).all(|k| cholesky_succeeds(&h.frontal_slice(k), m)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transform::build_dct_plan;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_t(r: usize, c: usize, k: usize, rng: &mut ChaCha8Rng) -> Tensor3<f64> {
        Tensor3::from_fn(r, c, k, |_, _, _| rng.random_range(-1.0..1.0))
    }

    /// Independent c-product: explicit tube transforms from the plan entries
    /// and triple-loop matrix products per slice.
    fn brute_cprod(a: &Tensor3<f64>, b: &Tensor3<f64>, plan: &DctPlan<f64>) -> Tensor3<f64> {
        let c = plan.size();
        let phi = |j: usize, k: usize| plan.entry(j, k);
        let fwd = |x: &Tensor3<f64>| {
            Tensor3::from_fn(x.rows(), x.cols(), c, |i, j, k| {
                (0..c).map(|l| phi(k, l) * x[(i, j, l)]).sum::<f64>()
            })
        };
        let (ah, bh) = (fwd(a), fwd(b));
        let mut ch = Tensor3::zeros(a.rows(), b.cols(), c);
        for k in 0..c {
            for i in 0..a.rows() {
                for j in 0..b.cols() {
                    let mut s = 0.0f64;
                    for l in 0..a.cols() {
                        s += ah[(i, l, k)] * bh[(l, j, k)];
                    }
                    ch[(i, j, k)] = s;
                }
            }
        }
        Tensor3::from_fn(a.rows(), b.cols(), c, |i, j, k| {
            (0..c).map(|l| phi(l, k) * ch[(i, j, l)]).sum()
        })
    }

    fn matmul(a: &[f64], b: &[f64], m: usize, n: usize, l: usize) -> Vec<f64> {
        let mut out = vec![0.0; m * l];
        for i in 0..m {
            for j in 0..l {
                out[i * l + j] = (0..n).map(|p| a[i * n + p] * b[p * l + j]).sum();
            }
        }
        out
    }

    #[test]
    fn c1_is_matrix_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let plan = build_dct_plan::<f64>(1).unwrap();
        let a = rand_t(3, 4, 1, &mut rng);
        let b = rand_t(4, 2, 1, &mut rng);
        let got = cprod(&a, &b, &plan).unwrap();
        let want = matmul(a.as_slice(), b.as_slice(), 3, 4, 2);
        for (g, w) in got.as_slice().iter().zip(&want) {
            assert!((g - w).abs() <= 1e-12);
        }
    }

    #[test]
    fn matches_brute_force_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let plan = build_dct_plan::<f64>(2).unwrap();
        for _ in 0..5 {
            let a = rand_t(2, 2, 2, &mut rng);
            let b = rand_t(2, 2, 2, &mut rng);
            let got = cprod(&a, &b, &plan).unwrap();
            assert!(got.max_abs_diff(&brute_cprod(&a, &b, &plan)).unwrap() <= 1e-12);
        }
    }

    #[test]
    fn identity_law() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let plan = build_dct_plan::<f64>(3).unwrap();
        let b = rand_t(3, 4, 3, &mut rng);
        let e = identity_tensor(3, 3, &plan).unwrap();
        assert!(cprod(&e, &b, &plan).unwrap().max_abs_diff(&b).unwrap() <= 1e-12);
        let sq = rand_t(3, 3, 3, &mut rng);
        assert!(cprod(&sq, &e, &plan).unwrap().max_abs_diff(&sq).unwrap() <= 1e-12);
        assert!(cprod(&e, &sq, &plan).unwrap().max_abs_diff(&sq).unwrap() <= 1e-12);
    }

    #[test]
    fn identity_spatial_layout_for_two_channels() {
        let plan = build_dct_plan::<f64>(2).unwrap();
        let e = identity_tensor::<f64>(2, 2, &plan).unwrap();
        let s0 = e.frontal_slice(0);
        let s1 = e.frontal_slice(1);
        let r2 = 2f64.sqrt();
        for (v, w) in s0.iter().zip([r2, 0.0, 0.0, r2]) {
            assert!((v - w).abs() < 1e-15);
        }
        assert!(s1.iter().all(|v| v.abs() < 1e-15));
        assert_eq!(
            identity_tensor::<f64>(3, 1, &build_dct_plan::<f64>(1).unwrap()).unwrap(),
            identity_hat(3, 1)
        );
    }

    #[test]
    fn hat_product_factorizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let plan = build_dct_plan::<f64>(3).unwrap();
        let a = rand_t(2, 3, 3, &mut rng);
        let b = rand_t(3, 4, 3, &mut rng);
        let lhs = dct3(&cprod(&a, &b, &plan).unwrap(), &plan).unwrap();
        let rhs = cprod_hat(&dct3(&a, &plan).unwrap(), &dct3(&b, &plan).unwrap()).unwrap();
        assert!(lhs.max_abs_diff(&rhs).unwrap() <= 1e-12);
        let z = cprod_hat(&a, &Tensor3::zeros(3, 4, 3)).unwrap();
        assert_eq!(z, Tensor3::zeros(2, 4, 3));
    }

    #[test]
    fn transpose_rules() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let plan = build_dct_plan::<f64>(3).unwrap();
        let a = rand_t(3, 4, 3, &mut rng);
        let b = rand_t(4, 2, 3, &mut rng);
        let tt = ctranspose(&ctranspose(&a, &plan).unwrap(), &plan).unwrap();
        assert!(tt.max_abs_diff(&a).unwrap() <= 1e-12);
        let lhs = ctranspose(&cprod(&a, &b, &plan).unwrap(), &plan).unwrap();
        let rhs = cprod(
            &ctranspose(&b, &plan).unwrap(),
            &ctranspose(&a, &plan).unwrap(),
            &plan,
        )
        .unwrap();
        assert!(lhs.max_abs_diff(&rhs).unwrap() <= 1e-11);
        let p1 = build_dct_plan::<f64>(1).unwrap();
        let m = rand_t(2, 3, 1, &mut rng);
        assert_eq!(ctranspose(&m, &p1).unwrap(), slice_transpose(&m));
    }

    #[test]
    fn transposed_kernels_agree_with_explicit_transpose() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = rand_t(3, 4, 2, &mut rng);
        let b = rand_t(5, 4, 2, &mut rng);
        let nt = slice_matmul_nt(&a, &b).unwrap();
        let explicit = slice_matmul(&a, &slice_transpose(&b)).unwrap();
        assert!(nt.max_abs_diff(&explicit).unwrap() <= 1e-14);
        let c = rand_t(3, 5, 2, &mut rng);
        let tn = slice_matmul_tn(&a, &c).unwrap();
        let explicit = slice_matmul(&slice_transpose(&a), &c).unwrap();
        assert!(tn.max_abs_diff(&explicit).unwrap() <= 1e-14);
    }

    #[test]
    fn inverse_of_diagonal_and_identity() {
        let p1 = build_dct_plan::<f64>(1).unwrap();
        let a = Tensor3::from_vec(2, 2, 1, vec![2.0, 0.0, 0.0, 4.0]).unwrap();
        let inv = cinv(&a, &p1).unwrap();
        assert_eq!(inv.as_slice(), &[0.5, 0.0, 0.0, 0.25]);
        let p3 = build_dct_plan::<f64>(3).unwrap();
        let e = identity_tensor(4, 3, &p3).unwrap();
        assert!(cinv(&e, &p3).unwrap().max_abs_diff(&e).unwrap() <= 1e-12);
    }

    #[test]
    fn inverse_of_random_tensor() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let plan = build_dct_plan::<f64>(3).unwrap();
        // Diagonally dominant in the DCT domain keeps every slice well conditioned.
        let mut h = rand_t(3, 3, 3, &mut rng);
        for i in 0..3 {
            for k in 0..3 {
                h[(i, i, k)] += 4.0;
            }
        }
        let a = idct3(&h, &plan).unwrap();
        let prod = cprod(&a, &cinv(&a, &plan).unwrap(), &plan).unwrap();
        let e = identity_tensor(3, 3, &plan).unwrap();
        assert!(prod.max_abs_diff(&e).unwrap() <= 1e-9);
    }

    #[test]
    fn singular_slice_is_named() {
        let plan = build_dct_plan::<f64>(3).unwrap();
        let mut h = identity_hat::<f64>(2, 3);
        h[(0, 0, 1)] = 0.0;
        h[(1, 1, 1)] = 0.0;
        let a = idct3(&h, &plan).unwrap();
        assert!(matches!(
            cinv(&a, &plan),
            Err(Error::SingularSlice { slice: 1 })
        ));
    }

    #[test]
    fn predicates_on_identity() {
        let plan = build_dct_plan::<f64>(3).unwrap();
        let e = identity_tensor::<f64>(3, 3, &plan).unwrap();
        assert!(is_f_diagonal(&e, &plan, 1e-10).unwrap());
        assert!(is_f_symmetric(&e, &plan, 1e-10).unwrap());
        assert!(is_f_orthogonal(&e, &plan, 1e-10).unwrap());
        assert!(is_f_positive_definite(&e, &plan).unwrap());
    }

    #[test]
    fn swap_slice_is_symmetric_but_indefinite() {
        let plan = build_dct_plan::<f64>(2).unwrap();
        let mut h = identity_hat::<f64>(2, 2);
        h.set_frontal_slice(1, &[0.0, 1.0, 1.0, 0.0]);
        let a = idct3(&h, &plan).unwrap();
        assert!(is_f_symmetric(&a, &plan, 1e-10).unwrap());
        assert!(!is_f_positive_definite(&a, &plan).unwrap());
        assert!(!is_f_diagonal(&a, &plan, 1e-10).unwrap());
    }

    #[test]
    fn predicates_reject_non_square() {
        let plan = build_dct_plan::<f64>(2).unwrap();
        let a = Tensor3::<f64>::zeros(2, 3, 2);
        assert!(matches!(
            is_f_symmetric(&a, &plan, 1e-10),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn shape_and_channel_errors() {
        let plan = build_dct_plan::<f64>(2).unwrap();
        let a = Tensor3::<f64>::zeros(2, 3, 2);
        let b = Tensor3::<f64>::zeros(2, 3, 2);
        assert!(matches!(cprod(&a, &b, &plan), Err(Error::Shape { .. })));
        let c = Tensor3::<f64>::zeros(3, 3, 3);
        assert!(matches!(cprod(&a, &c, &plan), Err(Error::Channels { .. })));
    }
}
