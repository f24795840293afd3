//! Nearest-candidate search for global and multi-local matching.
//!
//! The search runs on plain `f64` rows and only decides *which* candidate
//! wins for every output value. The winning distances are then re-evaluated
//! as tensors (see [`evaluate_candidates`]) so gradients reach both
//! embeddings and the biases through exactly one candidate per output.

use candle::Tensor;

use super::distance::biased_distance_tensor;
use crate::embedding::resample::tensor_from_f64;
use crate::error::Result;

pub(crate) const NONE: u32 = u32::MAX;

/// Foreground is kind 0, background kind 1.
pub(crate) const KINDS: usize = 2;

/// Winning candidate index and squared distance per output slot.
#[derive(Clone, Debug)]
pub(crate) struct ArgMins {
    pub index: Vec<u32>,
    pub squared: Vec<f64>,
}

#[inline]
fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[derive(Clone, Copy)]
struct Best {
    d2: f64,
    idx: u32,
}

impl Best {
    const EMPTY: Best = Best {
        d2: f64::INFINITY,
        idx: NONE,
    };

    /// Smaller distance wins; ties go to the lower row-major index.
    #[inline]
    fn offer(&mut self, d2: f64, idx: u32) {
        if d2 < self.d2 || (d2 == self.d2 && idx < self.idx) {
            self.d2 = d2;
            self.idx = idx;
        }
    }
}

/// Global search: every reference pixel is a candidate.
///
/// Output layout is `[object][kind][pixel]`.
pub(crate) fn global_argmins(
    cur: &[f64],
    reference: &[f64],
    channels: usize,
    ref_labels: &[u8],
    ids: &[u8],
) -> ArgMins {
    let pixels = cur.len() / channels;
    let slots = ids.len() * KINDS;
    let mut out = ArgMins {
        index: vec![NONE; slots * pixels],
        squared: vec![f64::INFINITY; slots * pixels],
    };
    let mut best = vec![Best::EMPTY; slots];
    for p in 0..pixels {
        let e_p = &cur[p * channels..(p + 1) * channels];
        best.fill(Best::EMPTY);
        for (q, (e_q, &label)) in reference.chunks_exact(channels).zip(ref_labels).enumerate() {
            let d2 = squared_distance(e_p, e_q);
            for (o, &id) in ids.iter().enumerate() {
                let kind = (label != id) as usize;
                best[o * KINDS + kind].offer(d2, q as u32);
            }
        }
        for (slot, b) in best.iter().enumerate() {
            out.index[slot * pixels + p] = b.idx;
            out.squared[slot * pixels + p] = b.d2;
        }
    }
    out
}

/// Multi-window local search on an `h x w` grid.
///
/// Candidates are visited once, in Chebyshev rings of growing radius around
/// each pixel, up to the largest window. The running minimum after ring `k`
/// is the minimum over the `(2k+1)^2` window, so every smaller window is
/// read off the same pass over the largest one.
///
/// Output layout is `[object][kind][window][pixel]`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn local_argmins(
    cur: &[f64],
    prev: &[f64],
    height: usize,
    width: usize,
    channels: usize,
    prev_labels: &[u8],
    ids: &[u8],
    windows: &[usize],
) -> ArgMins {
    let pixels = height * width;
    let n = windows.len();
    let k_max = *windows.last().expect("window set is non-empty");
    let slots = ids.len() * KINDS;
    let mut out = ArgMins {
        index: vec![NONE; slots * n * pixels],
        squared: vec![f64::INFINITY; slots * n * pixels],
    };
    let mut best = vec![Best::EMPTY; slots];
    let (h, w) = (height as isize, width as isize);

    for y in 0..h {
        for x in 0..w {
            let p = (y * w + x) as usize;
            let e_p = &cur[p * channels..(p + 1) * channels];
            best.fill(Best::EMPTY);
            let visit = |qy: isize, qx: isize, best: &mut [Best]| {
                let q = (qy * w + qx) as usize;
                let d2 = squared_distance(e_p, &prev[q * channels..(q + 1) * channels]);
                let label = prev_labels[q];
                for (o, &id) in ids.iter().enumerate() {
                    let kind = (label != id) as usize;
                    best[o * KINDS + kind].offer(d2, q as u32);
                }
            };
            let mut wi = 0;
            for r in 0..=k_max as isize {
                for dy in -r..=r {
                    let qy = y + dy;
                    if qy < 0 || qy >= h {
                        continue;
                    }
                    if dy.abs() == r {
                        for qx in (x - r).max(0)..=(x + r).min(w - 1) {
                            visit(qy, qx, &mut best);
                        }
                    } else {
                        if x - r >= 0 {
                            visit(qy, x - r, &mut best);
                        }
                        if x + r < w {
                            visit(qy, x + r, &mut best);
                        }
                    }
                }
                while wi < n && windows[wi] as isize == r {
                    for (slot, b) in best.iter().enumerate() {
                        let at = (slot * n + wi) * pixels + p;
                        out.index[at] = b.idx;
                        out.squared[at] = b.d2;
                    }
                    wi += 1;
                }
            }
        }
    }
    out
}

/// Re-evaluates the winning distances as a differentiable `(groups, P)` tensor.
///
/// `cur_rows` is `(P, C)`, `cand_rows` is `(Q, C)`, `argmins.index` holds
/// `groups * P` candidate indices and `group_bias` is `(groups,)`. Slots
/// without a candidate evaluate to exactly `1`.
///
/// Nested windows usually share their winner, so each distinct
/// (pixel, candidate) pair is evaluated once and then gathered per slot.
pub(crate) fn evaluate_candidates(
    cur_rows: &Tensor,
    cand_rows: &Tensor,
    argmins: &ArgMins,
    groups: usize,
    group_bias: &Tensor,
) -> Result<Tensor> {
    let (pixels, _) = cur_rows.dims2()?;
    debug_assert_eq!(argmins.index.len(), groups * pixels);
    let device = cur_rows.device();
    let (mut pair_cur, mut pair_cand) = (Vec::new(), Vec::new());
    let mut slot_pair = vec![0u32; groups * pixels];
    let mut seen: Vec<(u32, u32)> = Vec::with_capacity(groups);
    for p in 0..pixels {
        seen.clear();
        for g in 0..groups {
            let q = argmins.index[g * pixels + p];
            if q == NONE {
                continue;
            }
            let pair = match seen.iter().find(|&&(c, _)| c == q) {
                Some(&(_, at)) => at,
                None => {
                    let at = pair_cur.len() as u32;
                    pair_cur.push(p as u32);
                    pair_cand.push(q);
                    seen.push((q, at));
                    at
                }
            };
            slot_pair[g * pixels + p] = pair;
        }
    }
    if pair_cur.is_empty() {
        // Every slot is empty; keep one dummy pair so the gather is valid.
        pair_cur.push(0);
        pair_cand.push(0);
    }
    let pairs = pair_cur.len();
    let pair_cur = Tensor::from_vec(pair_cur, pairs, device)?;
    let pair_cand = Tensor::from_vec(pair_cand, pairs, device)?;
    let pair_d2 = (cand_rows.index_select(&pair_cand, 0)? - cur_rows.index_select(&pair_cur, 0)?)?
        .sqr()?
        .sum(1)?;
    let slot_pair = Tensor::from_vec(slot_pair, groups * pixels, device)?;
    let d2 = pair_d2.index_select(&slot_pair, 0)?.reshape((groups, pixels))?;
    let dist = biased_distance_tensor(&d2, &group_bias.unsqueeze(1)?)?;

    let empty: Vec<f64> = argmins.index.iter().map(|&i| (i == NONE) as u8 as f64).collect();
    let empty = tensor_from_f64(empty, &[groups, pixels], cur_rows)?;
    let keep = empty.affine(-1.0, 1.0)?;
    Ok(((dist * keep)? + empty)?)
}

/// Pulls a tensor into a flat `f64` vector.
pub(crate) fn to_f64_vec(t: &Tensor) -> Result<Vec<f64>> {
    Ok(t.flatten_all()?.to_dtype(candle::DType::F64)?.to_vec1::<f64>()?)
}
