//! The full network: encoder, trainable matching biases and the
//! collaborative ensembler, wired together for one prediction step.

use std::collections::HashMap;

use candle::{DType, Device, Tensor};
use candle_nn::{Init, VarBuilder, VarMap};
use serde::{Deserialize, Serialize};

use crate::attention::pool_objects;
use crate::embedding::{EmbeddingMap, Encoder, EncoderConfig, Frame, LabelMap};
use crate::ensembler::{CollaborativeEnsembler, EnsemblerConfig};
use crate::error::{Error, Result};
use crate::matching::{
    assemble_objects, global_match_objects, multi_local_match_objects, BiasPair, GuidanceLayout, WindowSet,
};
use crate::nn::init_params;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub windows: WindowSet,
    pub ensembler: EnsemblerConfig,
    /// Background matching maps and background instance means. Turning this
    /// off leaves a foreground-only model.
    pub background: bool,
    /// Instance-level channel gates in the ensembler.
    pub instance_attention: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::default(),
            windows: WindowSet::default(),
            ensembler: EnsemblerConfig::default(),
            background: true,
            instance_attention: true,
        }
    }
}

impl ModelConfig {
    /// Small widths suitable for single-core experiments on 64x64 clips.
    pub fn desk() -> Self {
        Self {
            ensembler: EnsemblerConfig::desk(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.ensembler.validate()
    }

    pub fn guidance_layout(&self) -> GuidanceLayout {
        GuidanceLayout {
            embedding_dim: self.encoder.embedding_dim,
            windows: self.windows.len(),
            background: self.background,
        }
    }

    /// Length of the instance guidance vector (0 when attention is off).
    pub fn instance_dim(&self) -> usize {
        match (self.instance_attention, self.background) {
            (false, _) => 0,
            (true, true) => 4 * self.encoder.embedding_dim,
            (true, false) => 2 * self.encoder.embedding_dim,
        }
    }
}

/// Encoder outputs for one frame.
#[derive(Clone, Debug)]
pub struct FrameFeatures {
    pub embedding: EmbeddingMap,
    /// `(C_low, h, w)`.
    pub low_level: Tensor,
}

/// What is known about the objects when predicting a frame.
#[derive(Clone, Copy, Debug)]
pub struct ObjectContext<'a> {
    pub reference: &'a FrameFeatures,
    /// Full-resolution labels of the first frame.
    pub reference_labels: &'a LabelMap,
    pub previous: &'a FrameFeatures,
    /// Full-resolution labels of the previous frame (ground truth or prediction).
    pub previous_labels: &'a LabelMap,
    /// Optional `(M, 1, h, w)` replacement for the binary previous-mask channel.
    pub previous_mask: Option<&'a Tensor>,
    pub object_ids: &'a [u8],
}

pub struct Cfbi {
    config: ModelConfig,
    varmap: VarMap,
    encoder: Encoder,
    biases: Tensor,
    ensembler: CollaborativeEnsembler,
    device: Device,
    dtype: DType,
}

impl std::fmt::Debug for Cfbi {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Cfbi")
            .field("config", &self.config)
            .field("dtype", &self.dtype)
            .finish_non_exhaustive()
    }
}

impl Cfbi {
    pub fn new(config: &ModelConfig, seed: u64, device: &Device, dtype: DType) -> Result<Self> {
        config.validate()?;
        let varmap = VarMap::new();
        let vb = VarBuilder::from_varmap(&varmap, dtype, device);
        let encoder = Encoder::new(&config.encoder, vb.pp("encoder"))?;
        let biases = vb.pp("matching").get_with_hints(2, "bias", Init::Const(0.0))?;
        let ensembler = CollaborativeEnsembler::new(
            &config.ensembler,
            config.guidance_layout().channels(),
            config.encoder.low_level_channels(),
            config.instance_dim(),
            vb.pp("ensembler"),
        )?;
        init_params(&varmap, seed)?;
        Ok(Self {
            config: config.clone(),
            varmap,
            encoder,
            biases,
            ensembler,
            device: device.clone(),
            dtype,
        })
    }

    /// Rebuilds a model from named parameter tensors (see the checkpoint module).
    pub fn from_tensors(config: &ModelConfig, tensors: &HashMap<String, Tensor>, device: &Device, dtype: DType) -> Result<Self> {
        let model = Self::new(config, 0, device, dtype)?;
        {
            let data = model.varmap.data().lock().expect("varmap lock poisoned");
            if data.len() != tensors.len() {
                return Err(Error::Checkpoint(format!(
                    "checkpoint holds {} tensors, model has {}",
                    tensors.len(),
                    data.len()
                )));
            }
            for (name, var) in data.iter() {
                let t = tensors
                    .get(name)
                    .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{name}`")))?;
                if t.dims() != var.dims() {
                    return Err(Error::Checkpoint(format!(
                        "tensor `{name}` has shape {:?}, expected {:?}",
                        t.dims(),
                        var.dims()
                    )));
                }
                var.set(&t.to_dtype(dtype)?.to_device(device)?)?;
            }
        }
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn varmap(&self) -> &VarMap {
        &self.varmap
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    pub fn ensembler(&self) -> &CollaborativeEnsembler {
        &self.ensembler
    }

    pub fn biases(&self) -> BiasPair {
        BiasPair::from_tensor(self.biases.clone()).expect("bias var has shape (2,)")
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn stride(&self) -> usize {
        self.encoder.stride()
    }

    /// Named copies of every parameter, for checkpoints and comparisons.
    pub fn named_tensors(&self) -> Vec<(String, Tensor)> {
        let data = self.varmap.data().lock().expect("varmap lock poisoned");
        let mut out: Vec<(String, Tensor)> = data
            .iter()
            .map(|(k, v)| (k.clone(), v.as_tensor().detach()))
            .collect();
        out.sort_by(|a, b| a.0.cmp(&b.0));
        out
    }

    /// Encodes frames of equal size in one batch.
    pub fn encode(&self, frames: &[&Frame]) -> Result<Vec<FrameFeatures>> {
        let Some(first) = frames.first() else {
            return Ok(Vec::new());
        };
        if frames.iter().any(|f| (f.height(), f.width()) != (first.height(), first.width())) {
            return Err(Error::input("frames in one batch must share a size"));
        }
        let batch = frames
            .iter()
            .map(|f| f.to_tensor(&self.device, self.dtype))
            .collect::<Result<Vec<_>>>()?;
        let (emb, low) = self.encoder.forward(&Tensor::stack(&batch, 0)?)?;
        (0..frames.len())
            .map(|i| {
                Ok(FrameFeatures {
                    embedding: EmbeddingMap::new(emb.get(i)?, self.stride())?,
                    low_level: low.get(i)?,
                })
            })
            .collect()
    }

    /// Per-object `(M, 2, H, W)` logits for `current`, where `output_size` is
    /// the full frame size `(H, W)`.
    pub fn predict(&self, ctx: &ObjectContext<'_>, current: &FrameFeatures, output_size: (usize, usize)) -> Result<Tensor> {
        let ids = ctx.object_ids;
        if ids.is_empty() {
            return Err(Error::input("no objects to segment"));
        }
        let s = self.stride();
        let biases = self.biases();
        let cur = &current.embedding;
        let ref_labels = ctx.reference_labels.downsample(s)?;
        let prev_labels = ctx.previous_labels.downsample(s)?;
        let prev_labels_half = ctx.previous_labels.downsample(2 * s)?;

        let global = global_match_objects(cur, &ctx.reference.embedding, &ref_labels, ids, &biases)?;
        let local = multi_local_match_objects(
            &cur.downsample(2)?,
            &ctx.previous.embedding.downsample(2)?,
            &prev_labels_half,
            ids,
            &self.config.windows,
            &biases,
        )?;
        let prev_masks = match ctx.previous_mask {
            Some(m) => m.clone(),
            None => {
                let masks = ids
                    .iter()
                    .map(|&id| prev_labels.mask_tensor(id, &self.device, self.dtype))
                    .collect::<Result<Vec<_>>>()?;
                Tensor::stack(&masks, 0)?
            }
        };
        let guidance = assemble_objects(
            cur.tensor(),
            ctx.previous.embedding.tensor(),
            &prev_masks,
            &local,
            &global,
            self.config.guidance_layout(),
        )?;
        let gates = if self.ensembler.is_gated() {
            let instance = pool_objects(
                ctx.reference.embedding.tensor(),
                &ref_labels,
                ctx.previous.embedding.tensor(),
                &prev_labels,
                ids,
                self.config.background,
            )?;
            Some(self.ensembler.compute_gates(&instance)?)
        } else {
            None
        };
        self.ensembler
            .forward(&guidance, &current.low_level.unsqueeze(0)?, gates.as_deref(), output_size)
    }
}
