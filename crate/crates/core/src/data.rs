//! Labelled image sets: a seeded synthetic task and the CIFAR-10 binary
//! format.

use std::path::{Path, PathBuf};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::model::Image;

/// Noise standard deviation of the synthetic task.
pub const SYNTHETIC_NOISE: f64 = 0.25;

pub const CIFAR_RECORD: usize = 1 + 3 * 1024;
pub const CIFAR_RECORDS_PER_FILE: usize = 10_000;

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub images: Vec<Image<f64>>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Keeps the first `n` samples.
    pub fn truncate(&mut self, n: usize) {
        self.images.truncate(n);
        self.labels.truncate(n);
    }
}

/// Per-channel normalization applied after scaling bytes to `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Normalization {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl Default for Normalization {
    fn default() -> Self {
        Self {
            mean: [0.4914, 0.4822, 0.4465],
            std: [0.2470, 0.2435, 0.2616],
        }
    }
}

/// Parses whole CIFAR-10 records (`1` label byte followed by the red,
/// green and blue planes, each 32×32 row-major).
pub fn parse_cifar10(bytes: &[u8], norm: &Normalization) -> Result<Dataset> {
    if bytes.is_empty() || !bytes.len().is_multiple_of(CIFAR_RECORD) {
        return Err(Error::Dataset(format!(
            "{} bytes is not a whole number of {CIFAR_RECORD}-byte records",
            bytes.len()
        )));
    }
    let mut images = Vec::with_capacity(bytes.len() / CIFAR_RECORD);
    let mut labels = Vec::with_capacity(images.capacity());
    for (r, rec) in bytes.chunks_exact(CIFAR_RECORD).enumerate() {
        let label = rec[0] as usize;
        if label > 9 {
            return Err(Error::Dataset(format!(
                "record {r}: label byte {label} > 9"
            )));
        }
        let mut data = vec![0.0; 3 * 1024];
        for c in 0..3 {
            let plane = &rec[1 + c * 1024..1 + (c + 1) * 1024];
            for (p, &byte) in plane.iter().enumerate() {
                let v = f64::from(byte) / 255.0;
                data[p * 3 + c] = (v - norm.mean[c]) / norm.std[c];
            }
        }
        images.push(Image {
            height: 32,
            width: 32,
            channels: 3,
            data,
        });
        labels.push(label);
    }
    Ok(Dataset {
        images,
        labels,
        num_classes: 10,
    })
}

/// Loads one CIFAR-10 batch file, which must hold exactly 10,000 records.
pub fn load_cifar10(path: &Path, limit: Option<usize>) -> Result<Dataset> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() != CIFAR_RECORD * CIFAR_RECORDS_PER_FILE {
        return Err(Error::Dataset(format!(
            "{}: expected {} bytes, found {}",
            path.display(),
            CIFAR_RECORD * CIFAR_RECORDS_PER_FILE,
            bytes.len()
        )));
    }
    let keep = limit
        .unwrap_or(CIFAR_RECORDS_PER_FILE)
        .min(CIFAR_RECORDS_PER_FILE);
    parse_cifar10(&bytes[..keep * CIFAR_RECORD], &Normalization::default())
}

/// Locates the batch files of the binary distribution in `dir` or in
/// `dir/cifar-10-batches-bin`.
fn cifar_files(dir: &Path, train: bool) -> Result<Vec<PathBuf>> {
    let names: Vec<String> = if train {
        (1..=5).map(|i| format!("data_batch_{i}.bin")).collect()
    } else {
        vec!["test_batch.bin".to_string()]
    };
    for base in [dir.to_path_buf(), dir.join("cifar-10-batches-bin")] {
        let files: Vec<PathBuf> = names.iter().map(|n| base.join(n)).collect();
        if files[0].is_file() {
            return Ok(files);
        }
    }
    Err(Error::Dataset(format!(
        "CIFAR-10 file {} not found under {}",
        names[0],
        dir.display()
    )))
}

/// Loads the training (`data_batch_1..5`) or test split, stopping once
/// `limit` samples have been read.
pub fn load_cifar10_split(dir: &Path, train: bool, limit: Option<usize>) -> Result<Dataset> {
    let mut out = Dataset {
        images: Vec::new(),
        labels: Vec::new(),
        num_classes: 10,
    };
    for file in cifar_files(dir, train)? {
        let want = limit.map(|l| l - out.len());
        if want == Some(0) {
            break;
        }
        let part = load_cifar10(&file, want)?;
        out.images.extend(part.images);
        out.labels.extend(part.labels);
    }
    Ok(out)
}

/// Train and test sets of the synthetic task, sharing class templates.
///
/// Each class has a fixed template; the templates are Gram-Schmidt
/// orthogonalized and scaled to unit pixel RMS, so the classes are linearly
/// separable. A sample is its class template plus independent Gaussian noise
/// of standard deviation `noise`. Sample `i` belongs to class
/// `i % num_classes`.
#[allow(clippy::too_many_arguments)]
pub fn make_synthetic_split(
    num_classes: usize,
    train_per_class: usize,
    test_per_class: usize,
    height: usize,
    width: usize,
    channels: usize,
    noise: f64,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    let dim = height * width * channels;
    if num_classes == 0 || num_classes > dim {
        return Err(Error::Config(format!(
            "cannot build {num_classes} orthogonal templates in dimension {dim}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut templates: Vec<Vec<f64>> = Vec::with_capacity(num_classes);
    while templates.len() < num_classes {
        let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        for t in &templates {
            let dot: f64 = v.iter().zip(t).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(t).for_each(|(a, b)| *a -= dot * b);
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-6 {
            v.iter_mut().for_each(|a| *a /= norm);
            templates.push(v);
        }
    }
    let scale = (dim as f64).sqrt();
    let mut draw = |per_class: usize| -> Dataset {
        let total = per_class * num_classes;
        let mut images = Vec::with_capacity(total);
        let mut labels = Vec::with_capacity(total);
        for i in 0..total {
            let class = i % num_classes;
            let data = templates[class]
                .iter()
                .map(|&t| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    t * scale + noise * z
                })
                .collect();
            images.push(Image {
                height,
                width,
                channels,
                data,
            });
            labels.push(class);
        }
        Dataset {
            images,
            labels,
            num_classes,
        }
    };
    let train = draw(train_per_class);
    let test = draw(test_per_class);
    Ok((train, test))
}

/// A single synthetic set with the default noise level.
pub fn make_synthetic(
    num_classes: usize,
    samples_per_class: usize,
    height: usize,
    width: usize,
    channels: usize,
    seed: u64,
) -> Result<Dataset> {
    make_synthetic_split(
        num_classes,
        samples_per_class,
        0,
        height,
        width,
        channels,
        SYNTHETIC_NOISE,
        seed,
    )
    .map(|(train, _)| train)
}

/// Random horizontal flip followed by a random crop from the image padded
/// with four zero pixels on every side.
pub fn augment<R: Rng>(image: &Image<f64>, rng: &mut R) -> Image<f64> {
    const PAD: usize = 4;
    let flip = rng.random_bool(0.5);
    let dy = rng.random_range(0..=2 * PAD);
    let dx = rng.random_range(0..=2 * PAD);
    let (h, w, c) = (image.height, image.width, image.channels);
    let mut out = Image::zeros(h, w, c);
    for y in 0..h {
        let sy = (y + dy).wrapping_sub(PAD);
        if sy >= h {
            continue;
        }
        for x in 0..w {
            let sx = (x + dx).wrapping_sub(PAD);
            if sx >= w {
                continue;
            }
            let sx = if flip { w - 1 - sx } else { sx };
            for ch in 0..c {
                out.set(y, x, ch, image.get(sy, sx, ch));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(label: u8, fill: u8) -> Vec<u8> {
        let mut r = vec![fill; CIFAR_RECORD];
        r[0] = label;
        r
    }

    #[test]
    fn two_records_round_trip() {
        let mut bytes = record(3, 0);
        bytes.extend(record(9, 255));
        let ds = parse_cifar10(&bytes, &Normalization::default()).unwrap();
        assert_eq!(ds.labels, vec![3, 9]);
        let id = Normalization {
            mean: [0.0; 3],
            std: [1.0; 3],
        };
        let ds = parse_cifar10(&bytes, &id).unwrap();
        assert!(ds.images[1].data.iter().all(|&v| v == 1.0));
        assert!(ds.images[0].data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn channel_planes_become_interleaved() {
        let mut rec = record(0, 0);
        rec[1 + 1024 + 5] = 255; // green plane, pixel (0, 5)
        let id = Normalization {
            mean: [0.0; 3],
            std: [1.0; 3],
        };
        let ds = parse_cifar10(&rec, &id).unwrap();
        assert_eq!(ds.images[0].get(0, 5, 1), 1.0);
        assert_eq!(ds.images[0].get(0, 5, 0), 0.0);
    }

    #[test]
    fn bad_sizes_and_labels() {
        assert!(matches!(
            parse_cifar10(&[0u8; 3072], &Normalization::default()),
            Err(Error::Dataset(_))
        ));
        assert!(parse_cifar10(&[], &Normalization::default()).is_err());
        assert!(parse_cifar10(&record(10, 0), &Normalization::default()).is_err());
    }

    #[test]
    fn loader_requires_full_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data_batch_1.bin");
        std::fs::write(&path, record(1, 7)).unwrap();
        assert!(matches!(load_cifar10(&path, None), Err(Error::Dataset(_))));
        let missing = dir.path().join("nope.bin");
        let err = load_cifar10(&missing, None).unwrap_err().to_string();
        assert!(err.contains("nope.bin"), "{err}");
    }

    #[test]
    fn synthetic_is_deterministic_and_balanced() {
        let a = make_synthetic(4, 5, 8, 8, 3, 9).unwrap();
        assert_eq!(a, make_synthetic(4, 5, 8, 8, 3, 9).unwrap());
        assert_ne!(a, make_synthetic(4, 5, 8, 8, 3, 10).unwrap());
        for c in 0..4 {
            assert_eq!(a.labels.iter().filter(|&&l| l == c).count(), 5);
        }
    }

    #[test]
    fn noiseless_synthetic_is_template_separable() {
        let (train, test) = make_synthetic_split(5, 1, 4, 8, 8, 3, 0.0, 2).unwrap();
        for (img, &label) in test.images.iter().zip(&test.labels) {
            let best = (0..5)
                .map(|c| {
                    let t = &train.images[c].data;
                    let dist: f64 = t.iter().zip(&img.data).map(|(a, b)| (a - b).powi(2)).sum();
                    (dist, c)
                })
                .fold((f64::INFINITY, 0), |a, b| if b.0 < a.0 { b } else { a });
            assert_eq!(best.1, label);
        }
    }

    #[test]
    fn augmentation_preserves_shape_and_mass_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let img = Image::new(8, 8, 3, vec![1.0; 192]).unwrap();
        for _ in 0..20 {
            let out = augment(&img, &mut rng);
            assert_eq!((out.height, out.width, out.channels), (8, 8, 3));
            let mass: f64 = out.data.iter().sum();
            assert!((0.0..=192.0).contains(&mass));
        }
    }
}
