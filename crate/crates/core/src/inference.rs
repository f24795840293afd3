//! Mask propagation through a sequence, optionally ensembled over input
//! scales and horizontal flips.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{write_masks, SequenceRecord};
use crate::embedding::resample::{flip_planes_horizontal, resize_planes_bilinear};
use crate::embedding::{Frame, LabelMap};
use crate::ensembler::{aggregate_objects, SegmentationResult};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, EvalReport, SequencePair};
use crate::model::{Cfbi, ObjectContext};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InferenceConfig {
    /// Input scale factors; each member of the ensemble runs the whole sequence.
    pub scales: Vec<f64>,
    /// Also run every scale on the mirrored sequence.
    pub flip: bool,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            scales: vec![1.0],
            flip: false,
        }
    }
}

impl InferenceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.scales.is_empty() || self.scales.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::config(format!("scales must be positive, got {:?}", self.scales)));
        }
        Ok(())
    }
}

fn check_inputs(frames: &[Frame], first: &LabelMap) -> Result<()> {
    if let Some(f) = frames.first() {
        if (f.height(), f.width()) != (first.height(), first.width()) {
            return Err(Error::input(format!(
                "first mask is {}x{}, frames are {}x{}",
                first.height(),
                first.width(),
                f.height(),
                f.width()
            )));
        }
    }
    Ok(())
}

/// Segments frames `2..=T` given the labels of frame 1 and the objects to track.
fn propagate(model: &Cfbi, frames: &[Frame], first: &LabelMap, ids: &[u8]) -> Result<Vec<SegmentationResult>> {
    let (h, w) = (first.height(), first.width());
    if frames.len() < 2 {
        return Ok(Vec::new());
    }
    if ids.is_empty() {
        return Ok((1..frames.len()).map(|_| SegmentationResult::background(h, w)).collect());
    }
    let reference = model.encode(&[&frames[0]])?.remove(0);
    let mut previous = reference.clone();
    let mut previous_labels = first.clone();
    let mut out = Vec::with_capacity(frames.len() - 1);
    for frame in &frames[1..] {
        let current = model.encode(&[frame])?.remove(0);
        let ctx = ObjectContext {
            reference: &reference,
            reference_labels: first,
            previous: &previous,
            previous_labels: &previous_labels,
            previous_mask: None,
            object_ids: ids,
        };
        let logits = model.predict(&ctx, &current, (h, w))?.detach();
        let result = aggregate_objects(&logits, ids)?;
        previous_labels = result.labels.clone();
        previous = current;
        out.push(result);
    }
    Ok(out)
}

/// Segments frames `2..=T`. Frame `t` is matched globally against frame 1
/// and locally against the prediction for frame `t - 1`.
///
/// An empty first mask yields all-background maps (with a warning).
pub fn segment_sequence(model: &Cfbi, frames: &[Frame], first: &LabelMap) -> Result<Vec<SegmentationResult>> {
    check_inputs(frames, first)?;
    let ids = first.object_ids();
    if ids.is_empty() && frames.len() > 1 {
        log::warn!("first mask has no objects; every frame is background");
    }
    propagate(model, frames, first, &ids)
}

/// Runs [`segment_sequence`] at every scale (and mirrored when `flip` is
/// set), maps the class probabilities back to the native size, averages
/// them and takes the per-pixel argmax.
pub fn multiscale_flip_inference(
    model: &Cfbi,
    frames: &[Frame],
    first: &LabelMap,
    cfg: &InferenceConfig,
) -> Result<Vec<SegmentationResult>> {
    cfg.validate()?;
    check_inputs(frames, first)?;
    let ids = first.object_ids();
    if frames.len() < 2 || ids.is_empty() {
        return segment_sequence(model, frames, first);
    }
    let (h, w) = (first.height(), first.width());
    let channels = ids.len() + 1;
    let mut sums = vec![vec![0.0f64; channels * h * w]; frames.len() - 1];
    let mut members = 0usize;
    let flips: &[bool] = if cfg.flip { &[false, true] } else { &[false] };
    for &scale in &cfg.scales {
        let sh = ((h as f64 * scale).round() as usize).max(model.stride());
        let sw = ((w as f64 * scale).round() as usize).max(model.stride());
        for &flip in flips {
            let prep_frame = |f: &Frame| {
                let f = if (sh, sw) == (h, w) { f.clone() } else { f.resize_bilinear(sh, sw) };
                if flip { f.flip_horizontal() } else { f }
            };
            let scaled: Vec<Frame> = frames.iter().map(prep_frame).collect();
            let mut mask = if (sh, sw) == (h, w) { first.clone() } else { first.resize_nearest(sh, sw) };
            if flip {
                mask = mask.flip_horizontal();
            }
            let results = propagate(model, &scaled, &mask, &ids)?;
            for (acc, r) in sums.iter_mut().zip(&results) {
                let mut probs = r.probabilities.clone();
                if flip {
                    probs = flip_planes_horizontal(&probs, channels, sh, sw);
                }
                let probs = resize_planes_bilinear(&probs, channels, sh, sw, h, w);
                for (a, p) in acc.iter_mut().zip(&probs) {
                    *a += *p as f64;
                }
            }
            members += 1;
        }
    }
    sums.into_iter()
        .map(|acc| {
            let probs = acc.iter().map(|v| (v / members as f64) as f32).collect();
            SegmentationResult::from_probabilities(ids.clone(), probs, h, w)
        })
        .collect()
}

/// Writes the given first mask and the predictions as `<dir>/masks/<name>.png`.
pub fn write_predictions(dir: &Path, names: &[String], first: &LabelMap, results: &[SegmentationResult]) -> Result<()> {
    if names.len() != results.len() + 1 {
        return Err(Error::input(format!("{} names for {} frames", names.len(), results.len() + 1)));
    }
    let masks: Vec<&LabelMap> = std::iter::once(first).chain(results.iter().map(|r| &r.labels)).collect();
    write_masks(dir, names, &masks)
}

/// Segments every annotated sequence from its first mask and scores the
/// result against the ground truth.
pub fn evaluate_model(
    model: &Cfbi,
    sequences: &[SequenceRecord],
    cfg: &InferenceConfig,
    tolerance: Option<f64>,
) -> Result<EvalReport> {
    let mut predicted = Vec::with_capacity(sequences.len());
    let mut truth = Vec::with_capacity(sequences.len());
    for seq in sequences {
        let gt: Vec<LabelMap> = seq.labels()?.into_iter().cloned().collect();
        let results = multiscale_flip_inference(model, &seq.frames, &gt[0], cfg)?;
        let labels: Vec<LabelMap> = std::iter::once(gt[0].clone())
            .chain(results.into_iter().map(|r| r.labels))
            .collect();
        predicted.push(labels);
        truth.push(gt);
    }
    let pairs: Vec<SequencePair<'_>> = sequences
        .iter()
        .zip(predicted.iter().zip(&truth))
        .map(|(s, (p, g))| SequencePair {
            name: &s.id,
            predicted: p,
            ground_truth: g,
        })
        .collect();
    evaluate(&pairs, tolerance)
}
