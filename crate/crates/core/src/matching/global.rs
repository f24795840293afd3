use candle::Tensor;

use super::distance::BiasPair;
use super::kernel::{evaluate_candidates, global_argmins, to_f64_vec, KINDS};
use crate::embedding::{EmbeddingMap, LabelMap};
use crate::error::{Error, Result};

/// Global foreground and background distance maps of one object, each `(h, w)`.
#[derive(Clone, Debug)]
pub struct GlobalMatch {
    pub foreground: Tensor,
    pub background: Tensor,
}

/// Matches every pixel of `cur` against all pixels of the first frame.
///
/// `ref_labels` must be aligned with `reference`. Where the object (or its
/// relative background) has no reference pixel the map is exactly `1`.
pub fn global_match(
    cur: &EmbeddingMap,
    reference: &EmbeddingMap,
    ref_labels: &LabelMap,
    object_id: u8,
    biases: &BiasPair,
) -> Result<GlobalMatch> {
    let maps = global_match_objects(cur, reference, ref_labels, &[object_id], biases)?.squeeze(0)?;
    Ok(GlobalMatch {
        foreground: maps.get(0)?,
        background: maps.get(1)?,
    })
}

/// Batched form of [`global_match`]: returns `(M, 2, h, w)` with channel 0
/// foreground and channel 1 background.
pub fn global_match_objects(
    cur: &EmbeddingMap,
    reference: &EmbeddingMap,
    ref_labels: &LabelMap,
    ids: &[u8],
    biases: &BiasPair,
) -> Result<Tensor> {
    if cur.channels() != reference.channels() {
        return Err(Error::input(format!(
            "embedding channels differ: {} vs {}",
            cur.channels(),
            reference.channels()
        )));
    }
    if (ref_labels.height(), ref_labels.width()) != (reference.height(), reference.width()) {
        return Err(Error::input("reference labels are not aligned with the reference embedding"));
    }
    if ids.contains(&0) {
        return Err(Error::input("object id 0 is reserved for background"));
    }
    let c = cur.channels();
    let (h, w) = (cur.height(), cur.width());
    let cur_rows = cur.rows()?;
    let ref_rows = reference.rows()?;
    let argmins = global_argmins(
        &to_f64_vec(&cur_rows)?,
        &to_f64_vec(&ref_rows)?,
        c,
        ref_labels.labels(),
        ids,
    );
    let groups = ids.len() * KINDS;
    let kinds: Vec<u32> = (0..groups).map(|g| (g % KINDS) as u32).collect();
    let group_bias = biases
        .tensor()
        .index_select(&Tensor::from_vec(kinds, groups, cur_rows.device())?, 0)?;
    let maps = evaluate_candidates(&cur_rows, &ref_rows, &argmins, groups, &group_bias)?;
    Ok(maps.reshape((ids.len(), KINDS, h, w))?)
}
