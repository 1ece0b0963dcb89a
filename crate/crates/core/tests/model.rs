//! The encoder against a plain-matrix reference written from the layer
//! definitions: per-slice transformer arithmetic on explicitly transformed
//! activations, with GELU and the output token taken in the spatial domain.

#![allow(clippy::needless_range_loop)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tcpvit::model::patchify;
use tcpvit::selfcheck::map_to_std;
use tcpvit::{encoder_forward, init_params, EncoderParams, Image, ModelConfig, Tensor, Variant};

type Mat = Vec<Vec<f64>>;

fn phi(k: usize, n: usize, c: usize) -> f64 {
    let s = if k == 0 { 1.0 } else { 2.0 };
    (s / c as f64).sqrt()
        * (std::f64::consts::PI * (2 * n + 1) as f64 * k as f64 / (2 * c) as f64).cos()
}

fn slice(t: &Tensor, k: usize) -> Mat {
    (0..t.rows())
        .map(|i| (0..t.cols()).map(|j| t[(i, j, k)]).collect())
        .collect()
}

fn slices(t: &Tensor) -> Vec<Mat> {
    (0..t.chans()).map(|k| slice(t, k)).collect()
}

fn matmul(a: &Mat, b: &Mat) -> Mat {
    a.iter()
        .map(|row| {
            (0..b[0].len())
                .map(|j| row.iter().zip(b).map(|(x, brow)| x * brow[j]).sum())
                .collect()
        })
        .collect()
}

fn add(a: &Mat, b: &Mat) -> Mat {
    a.iter()
        .zip(b)
        .map(|(r, s)| r.iter().zip(s).map(|(x, y)| x + y).collect())
        .collect()
}

fn add_row(a: &Mat, bias: &[f64]) -> Mat {
    a.iter()
        .map(|r| r.iter().zip(bias).map(|(x, b)| x + b).collect())
        .collect()
}

/// Mixes slices: `out[l] = Σ_s m(l, s) · xs[s]`.
fn mix(xs: &[Mat], m: impl Fn(usize, usize) -> f64) -> Vec<Mat> {
    let c = xs.len();
    (0..c)
        .map(|l| {
            let mut acc = vec![vec![0.0; xs[0][0].len()]; xs[0].len()];
            for (s, x) in xs.iter().enumerate() {
                let w = m(l, s);
                for (ar, xr) in acc.iter_mut().zip(x) {
                    for (a, v) in ar.iter_mut().zip(xr) {
                        *a += w * v;
                    }
                }
            }
            acc
        })
        .collect()
}

fn to_hat(xs: &[Mat]) -> Vec<Mat> {
    let c = xs.len();
    mix(xs, |k, s| phi(k, s, c))
}

fn to_spatial(xs: &[Mat]) -> Vec<Mat> {
    let c = xs.len();
    mix(xs, |s, k| phi(k, s, c))
}

fn layernorm(x: &Mat, gamma: &[f64], beta: &[f64]) -> Mat {
    x.iter()
        .map(|r| {
            let n = r.len() as f64;
            let mean = r.iter().sum::<f64>() / n;
            let sd = (r.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
            r.iter()
                .enumerate()
                .map(|(j, v)| gamma[j] * (v - mean) / (sd + 1e-5) + beta[j])
                .collect()
        })
        .collect()
}

fn softmax_rows(x: &Mat) -> Mat {
    x.iter()
        .map(|r| {
            let max = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = r.iter().map(|v| (v - max).exp()).collect();
            let total: f64 = e.iter().sum();
            e.iter().map(|v| v / total).collect()
        })
        .collect()
}

fn transpose(x: &Mat) -> Mat {
    (0..x[0].len())
        .map(|j| x.iter().map(|r| r[j]).collect())
        .collect()
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

fn reference_logits(image: &Image<f64>, p: &EncoderParams<f64>, cfg: &ModelConfig) -> Vec<f64> {
    let s = cfg.slices();
    // Tokens in the spatial domain, one matrix per slice.
    let patches = patchify(image, cfg).unwrap();
    let tokens: Vec<Mat> = match &p.patch_proj {
        None => slices(&patches),
        Some(proj) => {
            let flat: Mat = (0..patches.rows())
                .map(|n| {
                    let mut v = Vec::new();
                    for j in 0..patches.cols() {
                        for k in 0..patches.chans() {
                            v.push(patches[(n, j, k)]);
                        }
                    }
                    v
                })
                .collect();
            vec![add_row(
                &matmul(&flat, &slice(&proj.w, 0)),
                &slice(&proj.b, 0)[0],
            )]
        }
    };
    let x: Vec<Mat> = (0..s)
        .map(|k| {
            let mut m = slice(&p.cls, k);
            m.extend(tokens[k].iter().cloned());
            add(&m, &slice(&p.pos, k))
        })
        .collect();

    let mut xh = to_hat(&x);
    for b in &p.blocks {
        let mut mid = Vec::new();
        for k in 0..s {
            let a = layernorm(
                &xh[k],
                &slice(&b.ln1.gamma, k)[0],
                &slice(&b.ln1.beta, k)[0],
            );
            let mut heads = Vec::new();
            for h in 0..b.attn.query.len() {
                let q = add_row(
                    &matmul(&a, &slice(&b.attn.query[h].w, k)),
                    &slice(&b.attn.query[h].b, k)[0],
                );
                let kk = matmul(&a, &slice(&b.attn.key[h].w, k));
                let v = add_row(
                    &matmul(&a, &slice(&b.attn.value[h].w, k)),
                    &slice(&b.attn.value[h].b, k)[0],
                );
                let scale = 1.0 / (q[0].len() as f64).sqrt();
                let scores: Mat = matmul(&q, &transpose(&kk))
                    .into_iter()
                    .map(|r| r.into_iter().map(|v| v * scale).collect())
                    .collect();
                heads.push(matmul(&softmax_rows(&scores), &v));
            }
            let concat: Mat = (0..heads[0].len())
                .map(|i| heads.iter().flat_map(|h| h[i].iter().cloned()).collect())
                .collect();
            let o = add_row(
                &matmul(&concat, &slice(&b.attn.output.w, k)),
                &slice(&b.attn.output.b, k)[0],
            );
            mid.push(add(&xh[k], &o));
        }
        let hidden: Vec<Mat> = (0..s)
            .map(|k| {
                let a = layernorm(
                    &mid[k],
                    &slice(&b.ln2.gamma, k)[0],
                    &slice(&b.ln2.beta, k)[0],
                );
                add_row(&matmul(&a, &slice(&b.ffn1.w, k)), &slice(&b.ffn1.b, k)[0])
            })
            .collect();
        let act: Vec<Mat> = to_spatial(&hidden)
            .into_iter()
            .map(|m| {
                m.into_iter()
                    .map(|r| r.into_iter().map(gelu).collect())
                    .collect()
            })
            .collect();
        let act_hat = to_hat(&act);
        xh = (0..s)
            .map(|k| {
                let f = add_row(
                    &matmul(&act_hat[k], &slice(&b.ffn2.w, k)),
                    &slice(&b.ffn2.b, k)[0],
                );
                add(&mid[k], &f)
            })
            .collect();
    }
    let normed: Vec<Mat> = (0..s)
        .map(|k| {
            layernorm(
                &xh[k],
                &slice(&p.final_ln.gamma, k)[0],
                &slice(&p.final_ln.beta, k)[0],
            )
        })
        .collect();
    let spatial = to_spatial(&normed);
    let mut features = Vec::new();
    for j in 0..cfg.dim() {
        for m in &spatial {
            features.push(m[0][j]);
        }
    }
    let head = slice(&p.head_w, 0);
    let bias = slice(&p.head_b, 0);
    (0..cfg.num_classes)
        .map(|c| {
            bias[0][c]
                + features
                    .iter()
                    .zip(&head)
                    .map(|(z, r)| z * r[c])
                    .sum::<f64>()
        })
        .collect()
}

fn dense(cfg: &ModelConfig, seed: u64) -> EncoderParams<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = EncoderParams::zeros(cfg).unwrap();
    for (name, t) in p.tensors_mut() {
        let centre = if name.ends_with("gamma") { 1.0 } else { 0.0 };
        for v in t.as_mut_slice() {
            *v = centre + rng.random_range(-0.4..0.4);
        }
    }
    p
}

fn image(cfg: &ModelConfig, seed: u64) -> Image<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = cfg.img_h * cfg.img_w * cfg.channels;
    Image::new(
        cfg.img_h,
        cfg.img_w,
        cfg.channels,
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

fn small(channels: usize, variant: Variant) -> ModelConfig {
    ModelConfig {
        img_h: 8,
        img_w: 12,
        channels,
        patch: 4,
        heads: 2,
        layers: 2,
        r_ff: 2,
        num_classes: 5,
        variant,
        seed: 0,
    }
}

fn assert_close(got: &[f64], want: &[f64], tol: f64) {
    assert_eq!(got.len(), want.len());
    for (g, w) in got.iter().zip(want) {
        assert!(
            (g - w).abs() <= tol * w.abs().max(1.0),
            "{got:?} vs {want:?}"
        );
    }
}

#[test]
fn tcp_matches_reference_for_several_channel_counts() {
    for c in [1, 2, 3, 4] {
        let cfg = small(c, Variant::Tcp);
        let p = dense(&cfg, c as u64);
        for s in 0..3 {
            let img = image(&cfg, 100 + s);
            assert_close(
                &encoder_forward(&img, &p, &cfg).unwrap(),
                &reference_logits(&img, &p, &cfg),
                1e-10,
            );
        }
    }
}

#[test]
fn std_matches_reference() {
    let cfg = small(3, Variant::Std);
    let p = dense(&cfg, 9);
    for s in 0..3 {
        let img = image(&cfg, 200 + s);
        assert_close(
            &encoder_forward(&img, &p, &cfg).unwrap(),
            &reference_logits(&img, &p, &cfg),
            1e-10,
        );
    }
}

#[test]
fn single_channel_tcp_equals_mapped_std() {
    let cfg = small(1, Variant::Tcp);
    let tcp = dense(&cfg, 4);
    let std = map_to_std(&tcp, &cfg).unwrap();
    let std_cfg = cfg.with_variant(Variant::Std);
    for s in 0..10 {
        let img = image(&cfg, 300 + s);
        let a = encoder_forward(&img, &tcp, &cfg).unwrap();
        let b = encoder_forward(&img, &std, &std_cfg).unwrap();
        assert_close(&a, &b, 1e-10);
    }
}

#[test]
fn generic_scalar_forward_tracks_f64() {
    let cfg = small(3, Variant::Tcp);
    let p = dense(&cfg, 1);
    let img = image(&cfg, 2);
    let want = encoder_forward(&img, &p, &cfg).unwrap();
    let p32: EncoderParams<f32> = p.cast();
    let img32 = Image::new(
        img.height,
        img.width,
        img.channels,
        img.data.iter().map(|&v| v as f32).collect(),
    )
    .unwrap();
    let got = encoder_forward(&img32, &p32, &cfg).unwrap();
    for (g, w) in got.iter().zip(&want) {
        assert!((f64::from(*g) - w).abs() <= 1e-4 * w.abs().max(1.0));
    }
}

#[test]
fn init_is_seeded_and_shaped() {
    let cfg = ModelConfig::cls_paper();
    let a = init_params::<f64>(&cfg, 3).unwrap();
    assert_eq!(a, init_params::<f64>(&cfg, 3).unwrap());
    assert_ne!(a, init_params::<f64>(&cfg, 4).unwrap());
    assert_eq!(a.num_params(), 43_114);
    for (name, t) in a.tensors() {
        if name.ends_with(".w") {
            assert!(
                t.as_slice().iter().all(|v| v.abs() <= 0.04 + 1e-12),
                "{name}"
            );
            assert!(t.as_slice().iter().any(|&v| v != 0.0), "{name}");
        }
    }
}

#[test]
fn mismatched_inputs_are_rejected() {
    let cfg = small(3, Variant::Tcp);
    let p = dense(&cfg, 1);
    let wrong = Image::<f64>::zeros(8, 8, 3);
    assert!(encoder_forward(&wrong, &p, &cfg).is_err());
    assert!(encoder_forward(&image(&cfg, 0), &p, &cfg.with_variant(Variant::Std)).is_err());
    assert!(Image::<f64>::new(2, 2, 1, vec![0.0; 3]).is_err());
}
