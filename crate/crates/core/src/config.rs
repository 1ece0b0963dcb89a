//! Run configuration: architecture, optimizer and dataset settings in one
//! flat JSON object.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{load_cifar10_split, make_synthetic_split, Dataset, SYNTHETIC_NOISE};
use crate::error::{Error, Result};
use crate::grad::{Schedule, TrainConfig};
use crate::model::{ModelConfig, Variant};

/// Environment variable consulted when no dataset path is configured.
pub const DATA_DIR_ENV: &str = "TCPVIT_DATA_DIR";

/// Names accepted by [`RunConfig::preset`].
pub const PRESETS: &[&str] = &["cls-paper", "seg-paper", "synthetic", "gradcheck"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Synthetic,
    Cifar10,
}

impl std::str::FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "synthetic" => Ok(DatasetKind::Synthetic),
            "cifar10" => Ok(DatasetKind::Cifar10),
            other => Err(Error::Config(format!("unknown dataset `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub img_h: usize,
    pub img_w: usize,
    pub channels: usize,
    pub patch: usize,
    pub heads: usize,
    pub layers: usize,
    pub r_ff: usize,
    pub num_classes: usize,
    pub variant: Variant,
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub clip_norm: f64,
    pub schedule: Schedule,
    pub dataset: DatasetKind,
    pub dataset_path: Option<PathBuf>,
    /// Training samples to use (all when absent; required for synthetic).
    pub train_limit: Option<usize>,
    pub test_limit: Option<usize>,
    pub seed: u64,
    pub deterministic: bool,
    pub augment: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::from_model(&ModelConfig::cls_paper())
    }
}

impl RunConfig {
    /// Desk-scale defaults around an architecture: AdamW at `lr = 0.01`,
    /// `weight_decay = 0.01`, cosine schedule, clipping at 1.0, CIFAR-10
    /// subsampled to 2,000 / 500 images for 20 epochs in batches of 64.
    pub fn from_model(m: &ModelConfig) -> Self {
        Self {
            img_h: m.img_h,
            img_w: m.img_w,
            channels: m.channels,
            patch: m.patch,
            heads: m.heads,
            layers: m.layers,
            r_ff: m.r_ff,
            num_classes: m.num_classes,
            variant: m.variant,
            lr: 0.01,
            weight_decay: 0.01,
            epochs: 20,
            batch_size: 64,
            clip_norm: 1.0,
            schedule: Schedule::Cosine,
            dataset: DatasetKind::Cifar10,
            dataset_path: None,
            train_limit: Some(2_000),
            test_limit: Some(500),
            seed: m.seed,
            deterministic: false,
            augment: false,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "cls-paper" => Ok(Self::default()),
            "seg-paper" => Ok(Self {
                dataset: DatasetKind::Synthetic,
                train_limit: Some(20),
                test_limit: Some(10),
                batch_size: 10,
                epochs: 1,
                ..Self::from_model(&ModelConfig::seg_paper())
            }),
            "synthetic" => Ok(Self {
                dataset: DatasetKind::Synthetic,
                train_limit: Some(200),
                test_limit: Some(100),
                epochs: 30,
                batch_size: 20,
                deterministic: true,
                ..Self::default()
            }),
            "gradcheck" => Ok(Self {
                dataset: DatasetKind::Synthetic,
                train_limit: Some(12),
                test_limit: Some(6),
                batch_size: 4,
                epochs: 2,
                ..Self::from_model(&ModelConfig::gradcheck())
            }),
            other => Err(Error::Config(format!(
                "unknown preset `{other}` (known: {})",
                PRESETS.join(", ")
            ))),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn model(&self) -> ModelConfig {
        ModelConfig {
            img_h: self.img_h,
            img_w: self.img_w,
            channels: self.channels,
            patch: self.patch,
            heads: self.heads,
            layers: self.layers,
            r_ff: self.r_ff,
            num_classes: self.num_classes,
            variant: self.variant,
            seed: self.seed,
        }
    }

    pub fn training(&self) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            epochs: self.epochs,
            batch_size: self.batch_size,
            clip_norm: self.clip_norm,
            schedule: self.schedule,
            seed: self.seed,
            deterministic: self.deterministic,
            augment: self.augment,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model().validate()?;
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "epochs and batch_size must be positive".into(),
            ));
        }
        for (name, v) in [
            ("lr", self.lr),
            ("weight_decay", self.weight_decay),
            ("clip_norm", self.clip_norm),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!(
                    "`{name}` must be a finite non-negative number"
                )));
            }
        }
        if self.lr == 0.0 || self.clip_norm == 0.0 {
            return Err(Error::Config(
                "`lr` and `clip_norm` must be positive".into(),
            ));
        }
        if self.train_limit == Some(0) || self.test_limit == Some(0) {
            return Err(Error::Config("sample limits must be positive".into()));
        }
        if self.dataset == DatasetKind::Cifar10
            && (self.img_h, self.img_w, self.channels, self.num_classes) != (32, 32, 3, 10)
        {
            return Err(Error::Config(
                "CIFAR-10 requires 32x32x3 images and 10 classes".into(),
            ));
        }
        if self.dataset == DatasetKind::Synthetic && self.train_limit.is_none() {
            return Err(Error::Config("synthetic data needs `train_limit`".into()));
        }
        Ok(())
    }

    /// Directory holding the CIFAR-10 batch files: the configured path,
    /// else the environment variable.
    pub fn data_dir(&self) -> Option<PathBuf> {
        self.dataset_path
            .clone()
            .or_else(|| std::env::var_os(DATA_DIR_ENV).map(PathBuf::from))
    }

    /// Builds or loads the train and test sets.
    pub fn datasets(&self) -> Result<(Dataset, Dataset)> {
        self.validate()?;
        match self.dataset {
            DatasetKind::Synthetic => {
                let classes = self.num_classes;
                let n_train = self.train_limit.unwrap_or(0);
                let n_test = self.test_limit.unwrap_or(n_train);
                let (mut train, mut test) = make_synthetic_split(
                    classes,
                    n_train.div_ceil(classes),
                    n_test.div_ceil(classes),
                    self.img_h,
                    self.img_w,
                    self.channels,
                    SYNTHETIC_NOISE,
                    self.seed,
                )?;
                train.truncate(n_train);
                test.truncate(n_test);
                Ok((train, test))
            }
            DatasetKind::Cifar10 => {
                let dir = self.data_dir().ok_or_else(|| {
                    Error::Dataset(format!(
                        "no CIFAR-10 directory configured; set `dataset_path` or {DATA_DIR_ENV}"
                    ))
                })?;
                if !dir.exists() {
                    return Err(Error::Dataset(format!(
                        "dataset path {} does not exist",
                        dir.display()
                    )));
                }
                let train = load_cifar10_split(&dir, true, self.train_limit)?;
                let test = load_cifar10_split(&dir, false, self.test_limit)?;
                Ok((train, test))
            }
        }
    }
}
