//! Region similarity (J), boundary similarity (F) and their aggregation.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::embedding::LabelMap;
use crate::error::{Error, Result};

/// A binary mask on an `height x width` grid.
#[derive(Clone, Copy, Debug)]
pub struct Mask<'a> {
    pub height: usize,
    pub width: usize,
    pub pixels: &'a [bool],
}

impl<'a> Mask<'a> {
    pub fn new(height: usize, width: usize, pixels: &'a [bool]) -> Result<Self> {
        if pixels.len() != height * width {
            return Err(Error::input("mask length does not match its shape"));
        }
        Ok(Self { height, width, pixels })
    }
}

fn check_shapes(a: &Mask<'_>, b: &Mask<'_>) -> Result<()> {
    if (a.height, a.width) != (b.height, b.width) {
        return Err(Error::input(format!(
            "mask shapes differ: {}x{} vs {}x{}",
            a.height, a.width, b.height, b.width
        )));
    }
    Ok(())
}

/// Intersection over union; `1` when both masks are empty.
pub fn region_j(pred: &Mask<'_>, gt: &Mask<'_>) -> Result<f64> {
    check_shapes(pred, gt)?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (&p, &g) in pred.pixels.iter().zip(gt.pixels) {
        inter += (p && g) as usize;
        union += (p || g) as usize;
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// Pixels of `mask` with a 4-neighbour outside the mask or on the image border.
pub fn boundary_pixels(mask: &Mask<'_>) -> Vec<bool> {
    let (h, w) = (mask.height, mask.width);
    let at = |y: usize, x: usize| mask.pixels[y * w + x];
    let mut out = vec![false; h * w];
    for y in 0..h {
        for x in 0..w {
            if !at(y, x) {
                continue;
            }
            out[y * w + x] = y == 0
                || x == 0
                || y + 1 == h
                || x + 1 == w
                || !at(y - 1, x)
                || !at(y + 1, x)
                || !at(y, x - 1)
                || !at(y, x + 1);
        }
    }
    out
}

/// Marks every pixel within Euclidean distance `radius` of a set pixel.
fn dilate(set: &[bool], h: usize, w: usize, radius: f64) -> Vec<bool> {
    let r = radius.floor() as isize;
    let r2 = radius * radius;
    let offsets: Vec<(isize, isize)> = (-r..=r)
        .flat_map(|dy| (-r..=r).map(move |dx| (dy, dx)))
        .filter(|&(dy, dx)| (dy * dy + dx * dx) as f64 <= r2)
        .collect();
    let mut out = vec![false; h * w];
    for y in 0..h as isize {
        for x in 0..w as isize {
            if !set[(y * w as isize + x) as usize] {
                continue;
            }
            for &(dy, dx) in &offsets {
                let (qy, qx) = (y + dy, x + dx);
                if qy >= 0 && qx >= 0 && qy < h as isize && qx < w as isize {
                    out[(qy * w as isize + qx) as usize] = true;
                }
            }
        }
    }
    out
}

/// Boundary F-measure with a matching tolerance of `radius` pixels.
///
/// Precision is the fraction of predicted boundary pixels within `radius`
/// of a ground-truth boundary pixel, recall the converse. Two empty
/// boundaries score `1`; exactly one empty boundary scores `0`.
pub fn boundary_f(pred: &Mask<'_>, gt: &Mask<'_>, radius: f64) -> Result<f64> {
    check_shapes(pred, gt)?;
    let (h, w) = (pred.height, pred.width);
    let pb = boundary_pixels(pred);
    let gb = boundary_pixels(gt);
    let n_pred = pb.iter().filter(|&&b| b).count();
    let n_gt = gb.iter().filter(|&&b| b).count();
    match (n_pred, n_gt) {
        (0, 0) => return Ok(1.0),
        (0, _) | (_, 0) => return Ok(0.0),
        _ => {}
    }
    let gt_zone = dilate(&gb, h, w, radius);
    let pred_zone = dilate(&pb, h, w, radius);
    let hits = |b: &[bool], zone: &[bool]| b.iter().zip(zone).filter(|(&b, &z)| b && z).count();
    let precision = hits(&pb, &gt_zone) as f64 / n_pred as f64;
    let recall = hits(&gb, &pred_zone) as f64 / n_gt as f64;
    Ok(if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    })
}

/// Default boundary tolerance: 0.8% of the image diagonal, rounded up.
pub fn default_tolerance(height: usize, width: usize) -> f64 {
    (0.008 * ((height * height + width * width) as f64).sqrt()).ceil()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectScore {
    pub object_id: u8,
    pub j: f64,
    pub f: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceScore {
    pub sequence: String,
    pub objects: Vec<ObjectScore>,
}

/// Per-sequence, per-object scores plus global means.
///
/// Serialised as JSON:
/// `{"tolerance": r, "sequences": [{"sequence", "objects": [{"object_id", "j", "f"}]}],
///   "mean_j", "mean_f", "j_and_f", "warnings": [..]}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub tolerance: Option<f64>,
    pub sequences: Vec<SequenceScore>,
    pub mean_j: f64,
    pub mean_f: f64,
    pub j_and_f: f64,
    pub warnings: Vec<String>,
}

impl EvalReport {
    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn summary_line(&self) -> String {
        format!("J {:.3}  F {:.3}  J&F {:.3}", self.mean_j, self.mean_f, self.j_and_f)
    }
}

/// A predicted and a ground-truth label sequence of one video.
pub struct SequencePair<'a> {
    pub name: &'a str,
    pub predicted: &'a [LabelMap],
    pub ground_truth: &'a [LabelMap],
}

/// Scores every object of the ground-truth first frame over frames `2..T`,
/// averaging per object over frames and then over all objects of all
/// sequences. `tolerance = None` picks [`default_tolerance`] per frame size.
pub fn evaluate(pairs: &[SequencePair<'_>], tolerance: Option<f64>) -> Result<EvalReport> {
    let mut sequences = Vec::new();
    let mut warnings = Vec::new();
    let (mut js, mut fs) = (Vec::new(), Vec::new());
    for pair in pairs {
        if pair.predicted.len() != pair.ground_truth.len() {
            return Err(Error::input(format!(
                "sequence `{}`: {} predicted frames for {} ground-truth frames",
                pair.name,
                pair.predicted.len(),
                pair.ground_truth.len()
            )));
        }
        let Some(first) = pair.ground_truth.first() else {
            continue;
        };
        let ids = first.object_ids();
        let predicted_ids: BTreeMap<u8, ()> = pair.predicted.iter().flat_map(|l| l.object_ids()).map(|i| (i, ())).collect();
        let extra: Vec<u8> = predicted_ids.keys().copied().filter(|i| !ids.contains(i)).collect();
        if !extra.is_empty() {
            let msg = format!("sequence `{}`: predicted ids {extra:?} absent from the first frame", pair.name);
            log::warn!("{msg}");
            warnings.push(msg);
        }
        let mut objects = Vec::new();
        for &id in &ids {
            let (mut j_sum, mut f_sum, mut frames) = (0.0, 0.0, 0usize);
            for (pred, gt) in pair.predicted.iter().zip(pair.ground_truth).skip(1) {
                let (h, w) = (gt.height(), gt.width());
                let pm = pred.binary_mask(id);
                let gm = gt.binary_mask(id);
                let pm = Mask::new(pred.height(), pred.width(), &pm)?;
                let gm = Mask::new(h, w, &gm)?;
                let r = tolerance.unwrap_or_else(|| default_tolerance(h, w));
                j_sum += region_j(&pm, &gm)?;
                f_sum += boundary_f(&pm, &gm, r)?;
                frames += 1;
            }
            if frames == 0 {
                continue;
            }
            let score = ObjectScore {
                object_id: id,
                j: j_sum / frames as f64,
                f: f_sum / frames as f64,
            };
            js.push(score.j);
            fs.push(score.f);
            objects.push(score);
        }
        sequences.push(SequenceScore {
            sequence: pair.name.to_string(),
            objects,
        });
    }
    let mean = |v: &[f64]| if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
    let (mean_j, mean_f) = (mean(&js), mean(&fs));
    Ok(EvalReport {
        tolerance,
        sequences,
        mean_j,
        mean_f,
        j_and_f: (mean_j + mean_f) / 2.0,
        warnings,
    })
}
