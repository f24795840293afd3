//! Sequential training: balanced random crops of `N + 2` frames, `N`
//! successive predictions with fed-back masks, bootstrapped cross-entropy
//! and SGD with momentum.

mod augment;
mod checkpoint;
mod crop;
mod loss;
mod optim;
mod step;

pub use augment::{augment_sequence, AugmentConfig};
pub use checkpoint::{checkpoint_info, load_checkpoint, save_checkpoint, CheckpointInfo, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use crop::{balanced_random_crop, CropWindow, TrainSample};
pub use loss::{
    bootstrap_count, bootstrapped_ce_from_probabilities, bootstrapped_ce_loss, bootstrapped_mean, hardest_pixels,
    pixel_cross_entropy,
};
pub use optim::Sgd;
pub use step::{class_targets, sample_forward, sequential_train_step, FeedbackMode, SampleForward, StepReport};

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::SequenceRecord;
use crate::error::{Error, Result};
use crate::model::Cfbi;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// The learning rate decays as `lr * (1 - step / steps)^power`; 0 keeps it constant.
    pub lr_power: f64,
    pub steps: usize,
    /// Samples per optimizer update.
    pub batch_size: usize,
    pub crop_size: usize,
    /// Current frames per sample.
    pub n: usize,
    pub bootstrap_ratio: f64,
    /// Foreground pixels required in the reference crop; `None` means 1% of the crop area.
    pub min_fg_pixels: Option<usize>,
    pub max_retries: usize,
    pub augment: AugmentConfig,
    pub feedback: FeedbackMode,
    /// Save a checkpoint every this many steps (0 disables periodic saves).
    pub checkpoint_every: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            momentum: 0.9,
            weight_decay: 0.0,
            lr_power: 0.0,
            steps: 1000,
            batch_size: 1,
            crop_size: 64,
            n: 3,
            bootstrap_ratio: 0.15,
            min_fg_pixels: None,
            max_retries: 10,
            augment: AugmentConfig::default(),
            feedback: FeedbackMode::Detached,
            checkpoint_every: 0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, stride: usize) -> Result<()> {
        if !(self.bootstrap_ratio > 0.0 && self.bootstrap_ratio <= 1.0) {
            return Err(Error::config(format!("bootstrap ratio must be in (0, 1], got {}", self.bootstrap_ratio)));
        }
        if self.n == 0 || self.batch_size == 0 {
            return Err(Error::config("n and batch_size must be positive"));
        }
        if self.crop_size < stride {
            return Err(Error::config(format!("crop size {} is below the stride {stride}", self.crop_size)));
        }
        if !(self.lr_power >= 0.0 && self.lr_power.is_finite()) {
            return Err(Error::config("lr_power must be finite and non-negative"));
        }
        self.augment.validate()
    }

    pub fn min_fg_pixels(&self) -> usize {
        self.min_fg_pixels
            .unwrap_or_else(|| (self.crop_size * self.crop_size).div_ceil(100))
    }

    fn learning_rate_at(&self, step: usize) -> f64 {
        if self.lr_power == 0.0 || self.steps == 0 {
            return self.learning_rate;
        }
        self.learning_rate * (1.0 - step as f64 / self.steps as f64).powf(self.lr_power)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    /// Loss after every step.
    pub losses: Vec<f64>,
    /// Samples whose crop fell back to the best-seen window.
    pub below_threshold: usize,
    /// Checkpoints written, in order.
    pub checkpoints: Vec<PathBuf>,
}

/// Where [`train`] writes its checkpoints and loss log.
#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub dir: PathBuf,
}

impl TrainOutput {
    pub fn final_checkpoint(&self) -> PathBuf {
        self.dir.join("final.safetensors")
    }

    pub fn loss_log(&self) -> PathBuf {
        self.dir.join("loss.csv")
    }

    fn step_checkpoint(&self, step: usize) -> PathBuf {
        self.dir.join(format!("step_{step:06}.safetensors"))
    }
}

/// Trains `model` in place.
///
/// Sequences need a mask on every frame and at least `n + 2` frames; others
/// are skipped with a warning. With an output directory, `loss.csv`
/// (`step,loss`), periodic `step_XXXXXX.safetensors` and `final.safetensors`
/// are written there.
pub fn train(model: &Cfbi, dataset: &[SequenceRecord], cfg: &TrainConfig, output: Option<&TrainOutput>) -> Result<TrainReport> {
    cfg.validate(model.stride())?;
    let usable: Vec<&SequenceRecord> = dataset
        .iter()
        .filter(|s| {
            let ok = s.len() >= cfg.n + 2
                && s.labels().is_ok()
                && s.object_ids().is_ok_and(|ids| !ids.is_empty());
            if !ok {
                log::warn!("skipping sequence `{}`: needs {} fully annotated frames with objects", s.id, cfg.n + 2);
            }
            ok
        })
        .collect();
    if usable.is_empty() {
        return Err(Error::data("no sequence is usable for training"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut optimizer = Sgd::new(model.varmap(), cfg.learning_rate, cfg.momentum, cfg.weight_decay)?;
    let mut report = TrainReport::default();
    let mut log_file = match output {
        Some(out) => {
            std::fs::create_dir_all(&out.dir)?;
            let mut f = File::create(out.loss_log())?;
            writeln!(f, "step,loss")?;
            Some(f)
        }
        None => None,
    };

    for step in 0..cfg.steps {
        optimizer.learning_rate = cfg.learning_rate_at(step);
        let samples = (0..cfg.batch_size)
            .map(|_| {
                let seq = usable[rng.random_range(0..usable.len())];
                let seq = augment_sequence(seq, &cfg.augment, cfg.crop_size, &mut rng)?;
                balanced_random_crop(&seq, cfg.n, cfg.crop_size, cfg.min_fg_pixels(), cfg.max_retries, &mut rng)
            })
            .collect::<Result<Vec<_>>>()?;
        report.below_threshold += samples.iter().filter(|s| s.below_threshold).count();
        let r = sequential_train_step(model, &mut optimizer, &samples, cfg.bootstrap_ratio, cfg.feedback)
            .map_err(|e| match e {
                Error::Numeric(msg) => Error::Numeric(format!("step {}: {msg}", step + 1)),
                e => e,
            })?;
        report.losses.push(r.loss);
        if let Some(f) = log_file.as_mut() {
            writeln!(f, "{},{}", step + 1, r.loss)?;
        }
        if (step + 1) % 50 == 0 || step == 0 {
            log::info!("step {}/{}: loss {:.5}", step + 1, cfg.steps, r.loss);
        }
        if let Some(out) = output {
            if cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 {
                let path = out.step_checkpoint(step + 1);
                save_checkpoint(model, step + 1, &path)?;
                report.checkpoints.push(path);
            }
        }
    }
    if let Some(out) = output {
        let path = out.final_checkpoint();
        save_checkpoint(model, cfg.steps, &path)?;
        report.checkpoints.push(path);
    }
    Ok(report)
}

/// Convenience wrapper writing into `dir`.
pub fn train_to_dir(model: &Cfbi, dataset: &[SequenceRecord], cfg: &TrainConfig, dir: &Path) -> Result<TrainReport> {
    train(model, dataset, cfg, Some(&TrainOutput { dir: dir.to_path_buf() }))
}
