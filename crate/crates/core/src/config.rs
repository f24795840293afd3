//! Flat run configuration shared by the command-line tools.
//!
//! A run config is a TOML file of top-level `key = value` pairs. Every key is
//! optional; unknown keys are rejected. The defaults below are what an empty
//! file means:
//!
//! ```toml
//! # model
//! preset = "desk"            # "desk" (small ensembler) or "full" (128/256/256)
//! stride = 4                 # embedding stride, a power of two
//! encoder_widths = [16, 32, 48]
//! embedding_dim = 32
//! windows = [2, 4, 6, 8, 10, 12]
//! ensembler_widths = []      # empty keeps the preset's stage widths
//! background = true          # background matching and background instance means
//! instance_attention = true
//!
//! # training
//! lr = 0.01
//! lr_power = 0.0             # poly decay exponent, 0 keeps the rate constant
//! momentum = 0.9
//! weight_decay = 0.0
//! steps = 1000
//! batch_size = 1
//! crop_size = 64
//! n = 3                      # current frames per training sample
//! bootstrap_ratio = 0.15
//! min_fg_pixels = -1         # -1 means 1% of the crop area
//! max_retries = 10
//! augment_flip = true
//! scale_min = 1.0
//! scale_max = 1.3
//! feedback = "detached"      # or "soft"
//! checkpoint_every = 0
//!
//! # inference and evaluation
//! scales = [1.0]
//! flip = false
//! tolerance = -1.0           # boundary tolerance in pixels, -1 means 0.8% of the diagonal
//!
//! seed = 0
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::embedding::EncoderConfig;
use crate::ensembler::EnsemblerConfig;
use crate::error::{Error, Result};
use crate::inference::InferenceConfig;
use crate::matching::WindowSet;
use crate::model::ModelConfig;
use crate::training::{AugmentConfig, FeedbackMode, TrainConfig};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    #[default]
    Desk,
    Full,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub preset: Preset,
    pub stride: usize,
    pub encoder_widths: Vec<usize>,
    pub embedding_dim: usize,
    pub windows: Vec<usize>,
    pub ensembler_widths: Vec<usize>,
    pub background: bool,
    pub instance_attention: bool,

    pub lr: f64,
    pub lr_power: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub crop_size: usize,
    pub n: usize,
    pub bootstrap_ratio: f64,
    pub min_fg_pixels: i64,
    pub max_retries: usize,
    pub augment_flip: bool,
    pub scale_min: f64,
    pub scale_max: f64,
    pub feedback: FeedbackMode,
    pub checkpoint_every: usize,

    pub scales: Vec<f64>,
    pub flip: bool,
    pub tolerance: f64,

    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let enc = EncoderConfig::default();
        let train = TrainConfig::default();
        let infer = InferenceConfig::default();
        Self {
            preset: Preset::Desk,
            stride: enc.stride,
            encoder_widths: enc.widths,
            embedding_dim: enc.embedding_dim,
            windows: WindowSet::default().into(),
            ensembler_widths: Vec::new(),
            background: true,
            instance_attention: true,
            lr: train.learning_rate,
            lr_power: train.lr_power,
            momentum: train.momentum,
            weight_decay: train.weight_decay,
            steps: train.steps,
            batch_size: train.batch_size,
            crop_size: train.crop_size,
            n: train.n,
            bootstrap_ratio: train.bootstrap_ratio,
            min_fg_pixels: -1,
            max_retries: train.max_retries,
            augment_flip: train.augment.flip,
            scale_min: train.augment.scale_range[0],
            scale_max: train.augment.scale_range[1],
            feedback: train.feedback,
            checkpoint_every: train.checkpoint_every,
            scales: infer.scales,
            flip: infer.flip,
            tolerance: -1.0,
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config always serialises")
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        let mut ensembler = match self.preset {
            Preset::Desk => EnsemblerConfig::desk(),
            Preset::Full => EnsemblerConfig::default(),
        };
        if !self.ensembler_widths.is_empty() {
            ensembler.stage_widths = self.ensembler_widths.clone();
        }
        let cfg = ModelConfig {
            encoder: EncoderConfig {
                stride: self.stride,
                widths: self.encoder_widths.clone(),
                embedding_dim: self.embedding_dim,
                ..EncoderConfig::default()
            },
            windows: WindowSet::new(self.windows.clone())?,
            ensembler,
            background: self.background,
            instance_attention: self.instance_attention,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let min_fg_pixels = match self.min_fg_pixels {
            -1 => None,
            v if v >= 0 => Some(v as usize),
            v => return Err(Error::config(format!("min_fg_pixels must be -1 or non-negative, got {v}"))),
        };
        let cfg = TrainConfig {
            learning_rate: self.lr,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            lr_power: self.lr_power,
            steps: self.steps,
            batch_size: self.batch_size,
            crop_size: self.crop_size,
            n: self.n,
            bootstrap_ratio: self.bootstrap_ratio,
            min_fg_pixels,
            max_retries: self.max_retries,
            augment: AugmentConfig {
                flip: self.augment_flip,
                scale_range: [self.scale_min, self.scale_max],
            },
            feedback: self.feedback,
            checkpoint_every: self.checkpoint_every,
            seed: self.seed,
        };
        cfg.validate(self.stride)?;
        Ok(cfg)
    }

    pub fn inference_config(&self) -> Result<InferenceConfig> {
        let cfg = InferenceConfig {
            scales: self.scales.clone(),
            flip: self.flip,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Boundary tolerance, `None` for the diagonal-relative default.
    pub fn tolerance(&self) -> Result<Option<f64>> {
        match self.tolerance {
            -1.0 => Ok(None),
            t if t.is_finite() && t >= 0.0 => Ok(Some(t)),
            t => Err(Error::config(format!("tolerance must be -1 or non-negative, got {t}"))),
        }
    }
}
