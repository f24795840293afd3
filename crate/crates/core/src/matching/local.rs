use candle::Tensor;
use serde::{Deserialize, Serialize};

use super::distance::BiasPair;
use super::kernel::{evaluate_candidates, local_argmins, to_f64_vec, KINDS};
use crate::embedding::{EmbeddingMap, LabelMap};
use crate::error::{Error, Result};

/// Strictly increasing local window radii. A radius `k` covers the
/// `(2k+1) x (2k+1)` Chebyshev neighbourhood, clipped at the borders.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct WindowSet(Vec<usize>);

impl WindowSet {
    pub fn new(radii: Vec<usize>) -> Result<Self> {
        if radii.is_empty() {
            return Err(Error::config("window set must not be empty"));
        }
        if radii[0] == 0 || radii.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config(format!(
                "window radii must be positive and strictly increasing, got {radii:?}"
            )));
        }
        Ok(Self(radii))
    }

    pub fn radii(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn largest(&self) -> usize {
        *self.0.last().expect("non-empty")
    }
}

impl Default for WindowSet {
    fn default() -> Self {
        Self(vec![2, 4, 6, 8, 10, 12])
    }
}

impl TryFrom<Vec<usize>> for WindowSet {
    type Error = Error;

    fn try_from(radii: Vec<usize>) -> Result<Self> {
        Self::new(radii)
    }
}

impl From<WindowSet> for Vec<usize> {
    fn from(w: WindowSet) -> Self {
        w.0
    }
}

/// Local foreground and background maps of one object, each `(n, h, w)`
/// with one plane per window radius in increasing order.
#[derive(Clone, Debug)]
pub struct LocalMatch {
    pub foreground: Tensor,
    pub background: Tensor,
}

/// Matches each pixel of `cur` against the previous frame within every window.
///
/// Both embeddings and `prev_labels` must share one grid (normally the
/// half-resolution matching grid).
pub fn multi_local_match(
    cur: &EmbeddingMap,
    prev: &EmbeddingMap,
    prev_labels: &LabelMap,
    object_id: u8,
    windows: &WindowSet,
    biases: &BiasPair,
) -> Result<LocalMatch> {
    let n = windows.len();
    let maps = multi_local_match_objects(cur, prev, prev_labels, &[object_id], windows, biases)?.squeeze(0)?;
    Ok(LocalMatch {
        foreground: maps.narrow(0, 0, n)?,
        background: maps.narrow(0, n, n)?,
    })
}

/// Batched form of [`multi_local_match`]: `(M, 2n, h, w)` ordered
/// `[fg k_1..k_n | bg k_1..k_n]` per object.
pub fn multi_local_match_objects(
    cur: &EmbeddingMap,
    prev: &EmbeddingMap,
    prev_labels: &LabelMap,
    ids: &[u8],
    windows: &WindowSet,
    biases: &BiasPair,
) -> Result<Tensor> {
    let (c, h, w) = (cur.channels(), cur.height(), cur.width());
    if (prev.channels(), prev.height(), prev.width()) != (c, h, w) {
        return Err(Error::input("current and previous embeddings are not aligned"));
    }
    if (prev_labels.height(), prev_labels.width()) != (h, w) {
        return Err(Error::input("previous labels are not aligned with the embeddings"));
    }
    if ids.contains(&0) {
        return Err(Error::input("object id 0 is reserved for background"));
    }
    let n = windows.len();
    let cur_rows = cur.rows()?;
    let prev_rows = prev.rows()?;
    let argmins = local_argmins(
        &to_f64_vec(&cur_rows)?,
        &to_f64_vec(&prev_rows)?,
        h,
        w,
        c,
        prev_labels.labels(),
        ids,
        windows.radii(),
    );
    let groups = ids.len() * KINDS * n;
    let kinds: Vec<u32> = (0..groups).map(|g| ((g / n) % KINDS) as u32).collect();
    let group_bias = biases
        .tensor()
        .index_select(&Tensor::from_vec(kinds, groups, cur_rows.device())?, 0)?;
    let maps = evaluate_candidates(&cur_rows, &prev_rows, &argmins, groups, &group_bias)?;
    Ok(maps.reshape((ids.len(), KINDS * n, h, w))?)
}
