//! Instance-level foreground-background attention.
//!
//! Each object is summarised by the channel-wise mean embedding of its
//! foreground and relative background in the first and previous frames.
//! The concatenated vector drives one sigmoid channel gate per gated block
//! of the ensembler.

use candle::{Module, Tensor};
use candle_nn::{Linear, VarBuilder};

use crate::embedding::{EmbeddingMap, LabelMap};
use crate::error::{Error, Result};

/// `[mean fg(first) | mean bg(first) | mean fg(prev) | mean bg(prev)]`, `(4 C_e,)`.
#[derive(Clone, Debug)]
pub struct InstanceGuidance {
    tensor: Tensor,
}

impl InstanceGuidance {
    pub fn tensor(&self) -> &Tensor {
        &self.tensor
    }

    pub fn len(&self) -> usize {
        self.tensor.dims()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn pool_instance_embeddings(
    first: &EmbeddingMap,
    first_labels: &LabelMap,
    prev: &EmbeddingMap,
    prev_labels: &LabelMap,
    object_id: u8,
) -> Result<InstanceGuidance> {
    let pooled = pool_objects(first.tensor(), first_labels, prev.tensor(), prev_labels, &[object_id], true)?;
    Ok(InstanceGuidance {
        tensor: pooled.squeeze(0)?,
    })
}

/// `(M, 4C)` pooled guidance for several objects, or `(M, 2C)` with the
/// background means left out.
pub(crate) fn pool_objects(
    first: &Tensor,
    first_labels: &LabelMap,
    prev: &Tensor,
    prev_labels: &LabelMap,
    ids: &[u8],
    background: bool,
) -> Result<Tensor> {
    let (fg1, bg1) = masked_means(first, first_labels, ids)?;
    let (fg_prev, bg_prev) = masked_means(prev, prev_labels, ids)?;
    let parts = if background {
        vec![fg1, bg1, fg_prev, bg_prev]
    } else {
        vec![fg1, fg_prev]
    };
    Ok(Tensor::cat(&parts, 1)?)
}

/// Means over `label == id` and `label != id` for each id; an empty set
/// pools to zeros.
fn masked_means(emb: &Tensor, labels: &LabelMap, ids: &[u8]) -> Result<(Tensor, Tensor)> {
    let (c, h, w) = emb.dims3()?;
    if (labels.height(), labels.width()) != (h, w) {
        return Err(Error::input("labels are not aligned with the embedding"));
    }
    let pixels = h * w;
    let rows = emb.reshape((c, pixels))?.t()?;
    let mut fg = Vec::with_capacity(ids.len() * pixels);
    let mut fg_scale = Vec::with_capacity(ids.len());
    let mut bg_scale = Vec::with_capacity(ids.len());
    for &id in ids {
        let before = fg.len();
        fg.extend(labels.labels().iter().map(|&l| (l == id) as u8 as f64));
        let count = fg[before..].iter().sum::<f64>();
        fg_scale.push(1.0 / count.max(1.0));
        bg_scale.push(1.0 / (pixels as f64 - count).max(1.0));
    }
    let dtype = emb.dtype();
    let dev = emb.device();
    let m = ids.len();
    let fg = Tensor::from_vec(fg, (m, pixels), dev)?.to_dtype(dtype)?;
    let bg = fg.affine(-1.0, 1.0)?;
    let fg_scale = Tensor::from_vec(fg_scale, (m, 1), dev)?.to_dtype(dtype)?;
    let bg_scale = Tensor::from_vec(bg_scale, (m, 1), dev)?.to_dtype(dtype)?;
    let fg_mean = fg.matmul(&rows)?.broadcast_mul(&fg_scale)?;
    let bg_mean = bg.matmul(&rows)?.broadcast_mul(&bg_scale)?;
    Ok((fg_mean, bg_mean))
}

/// One fully-connected layer from the instance guidance to `channels`
/// sigmoid gates.
#[derive(Debug, Clone)]
pub struct ChannelGate {
    linear: Linear,
    channels: usize,
}

impl ChannelGate {
    pub fn new(guidance_dim: usize, channels: usize, vb: VarBuilder) -> Result<Self> {
        Ok(Self {
            linear: candle_nn::linear(guidance_dim, channels, vb)?,
            channels,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// `(M, G)` guidance to `(M, C)` gates in `(0, 1)`.
    pub fn gates(&self, guidance: &Tensor) -> Result<Tensor> {
        Ok(candle_nn::ops::sigmoid(&self.linear.forward(guidance)?)?)
    }
}

/// Scales each channel of `(M, C, h, w)` features by its `(M, C)` gate.
pub fn apply_gate(features: &Tensor, gates: &Tensor) -> Result<Tensor> {
    Ok(features.broadcast_mul(&gates.unsqueeze(2)?.unsqueeze(3)?)?)
}

/// Gate vector `(C,)` for a single object.
pub fn compute_gate(guidance: &InstanceGuidance, gate: &ChannelGate) -> Result<Tensor> {
    Ok(gate.gates(&guidance.tensor().unsqueeze(0)?)?.squeeze(0)?)
}
