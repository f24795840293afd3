use candle::Tensor;
use serde::{Deserialize, Serialize};

use super::global::GlobalMatch;
use super::local::LocalMatch;
use crate::embedding::resample::resize_bilinear;
use crate::embedding::EmbeddingMap;
use crate::error::{Error, Result};

/// Channel layout of the pixel-level guidance tensor:
///
/// `[cur_emb (C) | prev_emb (C) | prev_mask (1) | local_fg k_1..k_n | local_bg k_1..k_n | global_fg | global_bg]`
///
/// With `background == false` the two background groups are left out.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GuidanceLayout {
    pub embedding_dim: usize,
    pub windows: usize,
    pub background: bool,
}

impl GuidanceLayout {
    pub fn channels(&self) -> usize {
        let kinds = if self.background { 2 } else { 1 };
        2 * self.embedding_dim + 1 + kinds * self.windows + kinds
    }
}

/// All matching maps of one object. Local planes live on the (half-resolution)
/// local matching grid; global planes on the embedding grid.
#[derive(Clone, Debug)]
pub struct MatchMaps {
    pub global: GlobalMatch,
    pub local: LocalMatch,
}

/// Pixel-level guidance of one object, `(channels, h, w)`.
#[derive(Clone, Debug)]
pub struct PixelGuidance {
    tensor: Tensor,
    layout: GuidanceLayout,
}

impl PixelGuidance {
    pub fn tensor(&self) -> &Tensor {
        &self.tensor
    }

    pub fn layout(&self) -> GuidanceLayout {
        self.layout
    }
}

/// Concatenates embeddings, the previous mask and all matching maps of one
/// object into its guidance tensor. Local maps are bilinearly upsampled
/// onto the embedding grid first.
pub fn assemble_pixel_guidance(
    cur: &EmbeddingMap,
    prev: &EmbeddingMap,
    prev_mask: &Tensor,
    maps: &MatchMaps,
) -> Result<PixelGuidance> {
    let (h, w) = (cur.height(), cur.width());
    let prev_mask = prev_mask.reshape((1, 1, h, w)).map_err(|_| {
        Error::input(format!("previous mask {:?} does not match the {h}x{w} grid", prev_mask.dims()))
    })?;
    let local = Tensor::cat(&[&maps.local.foreground, &maps.local.background], 0)?.unsqueeze(0)?;
    let global = Tensor::stack(&[&maps.global.foreground, &maps.global.background], 0)?.unsqueeze(0)?;
    let layout = GuidanceLayout {
        embedding_dim: cur.channels(),
        windows: maps.local.foreground.dims()[0],
        background: true,
    };
    let tensor = assemble_objects(cur.tensor(), prev.tensor(), &prev_mask, &local, &global, layout)?.squeeze(0)?;
    Ok(PixelGuidance { tensor, layout })
}

/// Batched assembly for `M` objects.
///
/// `cur`, `prev`: `(C, h, w)`; `prev_masks`: `(M, 1, h, w)`;
/// `local`: `(M, 2n, h', w')` as `[fg.. | bg..]`; `global`: `(M, 2, h, w)`.
pub(crate) fn assemble_objects(
    cur: &Tensor,
    prev: &Tensor,
    prev_masks: &Tensor,
    local: &Tensor,
    global: &Tensor,
    layout: GuidanceLayout,
) -> Result<Tensor> {
    let (c, h, w) = cur.dims3()?;
    if prev.dims() != cur.dims() {
        return Err(Error::input(format!(
            "previous embedding {:?} not aligned with current {:?}",
            prev.dims(),
            cur.dims()
        )));
    }
    let m = prev_masks.dims()[0];
    if prev_masks.dims() != [m, 1, h, w] {
        return Err(Error::input(format!("previous masks {:?} not aligned", prev_masks.dims())));
    }
    let n = layout.windows;
    let (lm, lc, _, _) = local.dims4()?;
    let (gm, gc, gh, gw) = global.dims4()?;
    if lm != m || gm != m || lc != 2 * n || gc != 2 || (gh, gw) != (h, w) || c != layout.embedding_dim {
        return Err(Error::input("matching maps are not aligned with the guidance layout"));
    }
    let local = resize_bilinear(local, h, w)?;
    let (local, global) = if layout.background {
        (local, global.clone())
    } else {
        (local.narrow(1, 0, n)?, global.narrow(1, 0, 1)?)
    };
    let cur = cur.unsqueeze(0)?.broadcast_as((m, c, h, w))?.contiguous()?;
    let prev = prev.unsqueeze(0)?.broadcast_as((m, c, h, w))?.contiguous()?;
    let prev_masks = prev_masks.to_dtype(cur.dtype())?;
    Ok(Tensor::cat(&[&cur, &prev, &prev_masks, &local, &global], 1)?)
}
