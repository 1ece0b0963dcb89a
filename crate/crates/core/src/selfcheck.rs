//! Named numerical invariants run by the `selfcheck` command.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ctensor::{cinv, cprod, ctranspose, identity_tensor};
use crate::error::Result;
use crate::layers::{
    attention_hat, layernorm_hat, softmax_rows_hat, t_attention, TLayerNormParams,
};
use crate::model::{encoder_forward, init_params, EncoderParams, Image, ModelConfig, Variant};
use crate::tensor::Tensor3;
use crate::transform::{dct3, idct3, DctPlan};

/// Deliberate defects for exercising the failure path.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    /// Adds `1e-3` to the first DCT matrix entry.
    PerturbDct,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    /// Measured error and the tolerance it was held to.
    pub detail: String,
}

fn random(shape: (usize, usize, usize), rng: &mut ChaCha8Rng) -> Tensor3<f64> {
    Tensor3::from_fn(shape.0, shape.1, shape.2, |_, _, _| {
        rng.random_range(-1.0..1.0)
    })
}

fn rel(a: &Tensor3<f64>, b: &Tensor3<f64>) -> f64 {
    let diff = a
        .sub(b)
        .map(|t| t.frobenius_norm())
        .unwrap_or(f64::INFINITY);
    diff / a
        .frobenius_norm()
        .max(b.frobenius_norm())
        .max(f64::MIN_POSITIVE)
}

fn verdict(name: &'static str, err: f64, tol: f64) -> CheckResult {
    CheckResult {
        name,
        passed: err <= tol,
        detail: format!("error {err:.3e} (tolerance {tol:.0e})"),
    }
}

fn failed(name: &'static str, e: crate::error::Error) -> CheckResult {
    CheckResult {
        name,
        passed: false,
        detail: e.to_string(),
    }
}

fn plan(c: usize, fault: Option<Fault>) -> DctPlan<f64> {
    let p = DctPlan::new(c).expect("positive length");
    match fault {
        Some(Fault::PerturbDct) => p.perturbed(1e-3),
        None => p,
    }
}

/// Maps C = 1 c-product encoder parameters onto the flattened baseline with
/// an identity patch projection.
pub fn map_to_std(params: &EncoderParams<f64>, tcp: &ModelConfig) -> Result<EncoderParams<f64>> {
    let mut std = EncoderParams::zeros(&tcp.with_variant(Variant::Std))?;
    if let Some(proj) = std.patch_proj.as_mut() {
        for i in 0..proj.w.rows() {
            proj.w[(i, i, 0)] = 1.0;
        }
    }
    for ((_, dst), (_, src)) in std
        .tensors_mut()
        .into_iter()
        .filter(|(n, _)| !n.starts_with("patch_proj"))
        .zip(params.tensors())
    {
        *dst = src.clone();
    }
    Ok(std)
}

fn run(name: &'static str, f: impl FnOnce() -> Result<CheckResult>) -> CheckResult {
    f().unwrap_or_else(|e| failed(name, e))
}

/// Runs every invariant. With a fault injected, at least the orthogonality
/// check fails.
pub fn run_selfcheck(fault: Option<Fault>) -> Vec<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x7c9);
    let p3 = plan(3, fault);
    let mut out = Vec::new();

    out.push(run("dct-orthogonality", || {
        let worst = (1..=16)
            .map(|c| plan(c, fault).orthogonality_error())
            .fold(0.0f64, f64::max);
        Ok(verdict("dct-orthogonality", worst, 1e-12))
    }));

    let x = random((4, 5, 3), &mut rng);
    out.push(run("dct-round-trip", || {
        let back = idct3(&dct3(&x, &p3)?, &p3)?;
        Ok(verdict(
            "dct-round-trip",
            back.max_abs_diff(&x).unwrap_or(f64::INFINITY),
            1e-12,
        ))
    }));
    out.push(run("parseval", || {
        let y = dct3(&x, &p3)?;
        let err = (y.frobenius_norm() - x.frobenius_norm()).abs() / x.frobenius_norm();
        Ok(verdict("parseval", err, 1e-10))
    }));

    let a = random((3, 4, 3), &mut rng);
    let b = random((4, 2, 3), &mut rng);
    let b2 = random((4, 2, 3), &mut rng);
    let c = random((2, 5, 3), &mut rng);
    out.push(run("cprod-associativity", || {
        let lhs = cprod(&cprod(&a, &b, &p3)?, &c, &p3)?;
        let rhs = cprod(&a, &cprod(&b, &c, &p3)?, &p3)?;
        Ok(verdict("cprod-associativity", rel(&lhs, &rhs), 1e-10))
    }));
    out.push(run("cprod-distributivity", || {
        let lhs = cprod(&a, &b.add(&b2)?, &p3)?;
        let rhs = cprod(&a, &b, &p3)?.add(&cprod(&a, &b2, &p3)?)?;
        Ok(verdict("cprod-distributivity", rel(&lhs, &rhs), 1e-10))
    }));
    out.push(run("identity-law", || {
        let i4 = identity_tensor(4, 3, &p3)?;
        let i3 = identity_tensor(3, 3, &p3)?;
        let err = rel(&cprod(&a, &i4, &p3)?, &a).max(rel(&cprod(&i3, &a, &p3)?, &a));
        Ok(verdict("identity-law", err, 1e-12))
    }));
    out.push(run("reversal-law", || {
        let lhs = ctranspose(&cprod(&a, &b, &p3)?, &p3)?;
        let rhs = cprod(&ctranspose(&b, &p3)?, &ctranspose(&a, &p3)?, &p3)?;
        Ok(verdict("reversal-law", rel(&lhs, &rhs), 1e-10))
    }));
    out.push(run("inverse", || {
        let m = random((4, 4, 3), &mut rng).add(&identity_tensor(4, 3, &p3)?.scale(4.0))?;
        let prod = cprod(&m, &cinv(&m, &p3)?, &p3)?;
        Ok(verdict(
            "inverse",
            rel(&prod, &identity_tensor(4, 3, &p3)?),
            1e-10,
        ))
    }));
    out.push(run("softmax-rowsum", || {
        let s = random((5, 5, 3), &mut rng).scale(10.0);
        let p = softmax_rows_hat(&dct3(&s, &p3)?);
        let mut worst = 0.0f64;
        for i in 0..5 {
            for k in 0..3 {
                let sum: f64 = (0..5).map(|j| p[(i, j, k)]).sum();
                worst = worst.max((sum - 1.0).abs());
            }
        }
        Ok(verdict("softmax-rowsum", worst, 1e-12))
    }));
    out.push(run("layernorm-moments", || {
        let xh = random((4, 8, 3), &mut rng).scale(3.0);
        let y = layernorm_hat(&xh, &TLayerNormParams::new(8, 3))?;
        let mut worst = 0.0f64;
        for i in 0..4 {
            for k in 0..3 {
                let mean: f64 = (0..8).map(|j| y[(i, j, k)]).sum::<f64>() / 8.0;
                let var: f64 = (0..8).map(|j| (y[(i, j, k)] - mean).powi(2)).sum::<f64>() / 8.0;
                worst = worst.max(mean.abs()).max((var.sqrt() - 1.0).abs() - 1e-4);
            }
        }
        Ok(verdict("layernorm-moments", worst.max(0.0), 1e-10))
    }));
    out.push(run("fused-attention", || {
        let (q, k, v) = (
            random((5, 4, 3), &mut rng),
            random((5, 4, 3), &mut rng),
            random((5, 4, 3), &mut rng),
        );
        let fused = t_attention(&q, &k, &v, &p3)?;
        let (oh, _) = attention_hat(&dct3(&q, &p3)?, &dct3(&k, &p3)?, &dct3(&v, &p3)?)?;
        Ok(verdict(
            "fused-attention",
            rel(&fused, &idct3(&oh, &p3)?),
            1e-12,
        ))
    }));
    out.push(run("c1-equivalence", || {
        let p1 = plan(1, fault);
        let a1 = random((3, 4, 1), &mut rng);
        let b1 = random((4, 2, 1), &mut rng);
        let prod = cprod(&a1, &b1, &p1)?;
        let mut err = 0.0f64;
        for i in 0..3 {
            for j in 0..2 {
                let m: f64 = (0..4).map(|t| a1[(i, t, 0)] * b1[(t, j, 0)]).sum();
                err = err.max((prod[(i, j, 0)] - m).abs());
            }
        }
        let cfg = ModelConfig {
            img_h: 8,
            img_w: 8,
            channels: 1,
            patch: 4,
            heads: 2,
            layers: 2,
            r_ff: 2,
            num_classes: 3,
            variant: Variant::Tcp,
            seed: 0,
        };
        let tcp = init_params::<f64>(&cfg, 5)?;
        let std = map_to_std(&tcp, &cfg)?;
        let img = Image::new(
            8,
            8,
            1,
            (0..64).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )?;
        let lt = encoder_forward(&img, &tcp, &cfg)?;
        let ls = encoder_forward(&img, &std, &cfg.with_variant(Variant::Std))?;
        for (u, v) in lt.iter().zip(&ls) {
            err = err.max((u - v).abs());
        }
        Ok(verdict("c1-equivalence", err, 1e-12))
    }));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clean_build_passes() {
        let results = run_selfcheck(None);
        for r in &results {
            assert!(r.passed, "{}: {}", r.name, r.detail);
        }
        let names: Vec<_> = results.iter().map(|r| r.name).collect();
        for want in [
            "dct-orthogonality",
            "cprod-associativity",
            "identity-law",
            "reversal-law",
            "softmax-rowsum",
            "c1-equivalence",
        ] {
            assert!(names.contains(&want), "{want}");
        }
    }

    #[test]
    fn injected_fault_is_caught() {
        let results = run_selfcheck(Some(Fault::PerturbDct));
        let ortho = results
            .iter()
            .find(|r| r.name == "dct-orthogonality")
            .unwrap();
        assert!(!ortho.passed);
    }
}
