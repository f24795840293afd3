use candle::{DType, Tensor};

use crate::embedding::LabelMap;
use crate::error::{Error, Result};

/// Fused multi-object prediction for one frame.
#[derive(Clone, Debug, PartialEq)]
pub struct SegmentationResult {
    /// Object ids in channel order; channel `i + 1` belongs to `object_ids[i]`.
    pub object_ids: Vec<u8>,
    /// `(M + 1) x H x W` probabilities, channel 0 background.
    pub probabilities: Vec<f32>,
    pub labels: LabelMap,
}

impl SegmentationResult {
    pub fn height(&self) -> usize {
        self.labels.height()
    }

    pub fn width(&self) -> usize {
        self.labels.width()
    }

    pub fn channels(&self) -> usize {
        self.object_ids.len() + 1
    }

    /// Builds the result from `(M + 1) x H x W` probabilities by per-pixel argmax.
    /// Ties go to the lower channel, i.e. background first.
    pub fn from_probabilities(object_ids: Vec<u8>, probabilities: Vec<f32>, height: usize, width: usize) -> Result<Self> {
        let channels = object_ids.len() + 1;
        if probabilities.len() != channels * height * width {
            return Err(Error::input("probability buffer does not match its shape"));
        }
        let plane = height * width;
        let labels = (0..plane)
            .map(|p| {
                let mut best = 0;
                for c in 1..channels {
                    if probabilities[c * plane + p] > probabilities[best * plane + p] {
                        best = c;
                    }
                }
                if best == 0 { 0 } else { object_ids[best - 1] }
            })
            .collect();
        Ok(Self {
            object_ids,
            probabilities,
            labels: LabelMap::new(height, width, labels)?,
        })
    }

    /// All-background result with no tracked objects.
    pub fn background(height: usize, width: usize) -> Self {
        Self {
            object_ids: Vec::new(),
            probabilities: vec![1.0; height * width],
            labels: LabelMap::filled(height, width, 0),
        }
    }
}

/// `(M, 2, H, W)` per-object logits to `(M + 1, H, W)` class logits:
/// channel 0 is the pixel-wise minimum of the per-object background logits,
/// channels `1..=M` the per-object foreground logits.
pub fn stack_object_logits(logits: &Tensor) -> Result<Tensor> {
    let (m, two, _, _) = logits.dims4()?;
    if two != 2 || m == 0 {
        return Err(Error::input(format!("expected (M, 2, H, W) logits, got {:?}", logits.dims())));
    }
    let bg = logits.narrow(1, 1, 1)?.min_keepdim(0)?.squeeze(0)?;
    let fg = logits.narrow(1, 0, 1)?.squeeze(1)?;
    Ok(Tensor::cat(&[&bg, &fg], 0)?)
}

/// Softmax over the stacked class logits, then argmax to labels.
pub fn aggregate_objects(logits: &Tensor, object_ids: &[u8]) -> Result<SegmentationResult> {
    let (m, _, h, w) = logits.dims4()?;
    if m != object_ids.len() {
        return Err(Error::input(format!("{m} logit maps for {} object ids", object_ids.len())));
    }
    let probs = candle_nn::ops::softmax(&stack_object_logits(logits)?, 0)?;
    let probs = probs.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
    SegmentationResult::from_probabilities(object_ids.to_vec(), probs, h, w)
}
