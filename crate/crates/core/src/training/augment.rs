use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::SequenceRecord;
use crate::error::{Error, Result};

/// Whole-sequence augmentation applied before cropping.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    /// Mirror every frame horizontally with probability one half.
    pub flip: bool,
    /// Uniform range of the resize factor; `[1.0, 1.0]` disables scaling.
    pub scale_range: [f64; 2],
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            flip: true,
            scale_range: [1.0, 1.3],
        }
    }
}

impl AugmentConfig {
    pub fn none() -> Self {
        Self {
            flip: false,
            scale_range: [1.0, 1.0],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.scale_range;
        if !(lo.is_finite() && hi.is_finite() && lo > 0.0 && lo <= hi) {
            return Err(Error::config(format!("invalid scale range [{lo}, {hi}]")));
        }
        Ok(())
    }
}

/// Flips and rescales all frames and masks of a sequence together.
///
/// The scale factor is raised where needed so the shorter side stays at
/// least `min_side` pixels. Frames use bilinear resizing, masks nearest.
pub fn augment_sequence<R: Rng>(
    sequence: &SequenceRecord,
    cfg: &AugmentConfig,
    min_side: usize,
    rng: &mut R,
) -> Result<SequenceRecord> {
    cfg.validate()?;
    let flip = cfg.flip && rng.random_bool(0.5);
    let [lo, hi] = cfg.scale_range;
    let mut scale = if hi > lo { rng.random_range(lo..=hi) } else { lo };
    let (h, w) = (sequence.height(), sequence.width());
    let short = h.min(w).max(1) as f64;
    scale = scale.max(min_side as f64 / short);
    let (oh, ow) = (
        ((h as f64 * scale).round() as usize).max(min_side),
        ((w as f64 * scale).round() as usize).max(min_side),
    );
    let resize = (oh, ow) != (h, w);
    if !flip && !resize {
        return Ok(sequence.clone());
    }
    let frames = sequence
        .frames
        .iter()
        .map(|f| {
            let f = if flip { f.flip_horizontal() } else { f.clone() };
            if resize { f.resize_bilinear(oh, ow) } else { f }
        })
        .collect();
    let masks = sequence
        .masks
        .iter()
        .map(|m| {
            m.as_ref().map(|m| {
                let m = if flip { m.flip_horizontal() } else { m.clone() };
                if resize { m.resize_nearest(oh, ow) } else { m }
            })
        })
        .collect();
    SequenceRecord::with_masks(sequence.id.clone(), sequence.names.clone(), frames, masks)
}
