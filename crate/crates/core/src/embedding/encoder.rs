use candle::{Module, Tensor};
use candle_nn::VarBuilder;
use serde::{Deserialize, Serialize};

use super::types::{EmbeddingMap, Frame};
use crate::error::{Error, Result};
use crate::nn::{conv, Conv2d, ConvNormRelu};

/// Shape of the toy convolutional encoder.
///
/// `widths[0]` is the full-resolution stem; each further entry is one
/// stride-2 level (a downsampling conv followed by a refinement conv), so
/// `widths.len() == log2(stride) + 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub stride: usize,
    pub widths: Vec<usize>,
    pub embedding_dim: usize,
    pub norm_groups: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            stride: 4,
            widths: vec![16, 32, 48],
            embedding_dim: 32,
            norm_groups: 4,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.stride.is_power_of_two() {
            return Err(Error::config(format!("encoder stride {} is not a power of two", self.stride)));
        }
        let levels = self.stride.trailing_zeros() as usize;
        if self.widths.len() != levels + 1 {
            return Err(Error::config(format!(
                "stride {} needs {} encoder widths, got {}",
                self.stride,
                levels + 1,
                self.widths.len()
            )));
        }
        if self.embedding_dim == 0 || self.widths.contains(&0) {
            return Err(Error::config("encoder widths and embedding_dim must be positive"));
        }
        Ok(())
    }

    /// Channels of the low-level feature tap handed to the decoder.
    pub fn low_level_channels(&self) -> usize {
        *self.widths.last().expect("validated non-empty")
    }
}

#[derive(Debug, Clone)]
struct Level {
    down: ConvNormRelu,
    refine: ConvNormRelu,
}

/// Pixel-embedding encoder: stem, `log2(stride)` stride-2 levels, 1x1 head.
#[derive(Debug, Clone)]
pub struct Encoder {
    config: EncoderConfig,
    stem: ConvNormRelu,
    levels: Vec<Level>,
    head: Conv2d,
}

impl Encoder {
    pub fn new(config: &EncoderConfig, vb: VarBuilder) -> Result<Self> {
        config.validate()?;
        let g = config.norm_groups;
        let stem = ConvNormRelu::new(3, config.widths[0], 3, 1, 1, g, vb.pp("stem"))?;
        let levels = config
            .widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let vb = vb.pp(format!("level{i}"));
                Ok(Level {
                    down: ConvNormRelu::new(w[0], w[1], 3, 2, 1, g, vb.pp("down"))?,
                    refine: ConvNormRelu::new(w[1], w[1], 3, 1, 1, g, vb.pp("refine"))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let head = conv(config.low_level_channels(), config.embedding_dim, 1, 1, 1, vb.pp("head"))?;
        Ok(Self {
            config: config.clone(),
            stem,
            levels,
            head,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn stride(&self) -> usize {
        self.config.stride
    }

    /// Batched forward on `(B, 3, H, W)`.
    ///
    /// Returns the embedding `(B, C_e, h, w)` and the low-level tap
    /// `(B, C_low, h, w)` taken right after the last downsampling conv.
    pub fn forward(&self, frames: &Tensor) -> Result<(Tensor, Tensor)> {
        let (_, c, h, w) = frames.dims4()?;
        if c != 3 {
            return Err(Error::input(format!("expected 3 input channels, got {c}")));
        }
        let s = self.config.stride;
        if h < s || w < s {
            return Err(Error::input(format!("frame {h}x{w} smaller than stride {s}")));
        }
        let mut xs = self.stem.forward(frames)?;
        let mut low = xs.clone();
        for level in &self.levels {
            low = level.down.forward(&xs)?;
            xs = level.refine.forward(&low)?;
        }
        let emb = self.head.forward(&xs)?;
        Ok((emb, low))
    }
}

/// Embeds a single frame. Returns the embedding map and the `(C_low, h, w)`
/// low-level features.
pub fn extract_embedding(frame: &Frame, encoder: &Encoder, dtype: candle::DType) -> Result<(EmbeddingMap, Tensor)> {
    let s = encoder.stride();
    if frame.height() < s || frame.width() < s {
        return Err(Error::input(format!(
            "frame {}x{} smaller than stride {s}",
            frame.height(),
            frame.width()
        )));
    }
    let device = encoder.head.weight().device();
    let x = frame.to_tensor(device, dtype)?.unsqueeze(0)?;
    let (emb, low) = encoder.forward(&x)?;
    Ok((EmbeddingMap::new(emb.squeeze(0)?, s)?, low.squeeze(0)?))
}
