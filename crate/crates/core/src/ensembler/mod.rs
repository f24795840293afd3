//! The collaborative ensembler: three stages of gated, dilated residual
//! blocks (downsampling at the start of stages 2 and 3), a multi-rate context
//! module, and a decoder that fuses low-level encoder features and emits
//! per-object `(fg, bg)` logits.

mod aggregate;

pub use aggregate::{aggregate_objects, stack_object_logits, SegmentationResult};

use candle::{Module, Tensor};
use candle_nn::VarBuilder;
use serde::{Deserialize, Serialize};

use crate::attention::{apply_gate, ChannelGate};
use crate::embedding::resample::resize_bilinear;
use crate::error::{Error, Result};
use crate::nn::{conv, norm, Conv2d, ConvNormRelu, GroupNorm};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsemblerConfig {
    /// Output channels of each stage.
    pub stage_widths: Vec<usize>,
    /// One dilation per residual block; the block count of a stage is the
    /// length of its list.
    pub stage_dilations: Vec<Vec<usize>>,
    /// Dilations of the parallel context branches (a global-pooling branch
    /// is always added).
    pub context_rates: Vec<usize>,
    pub context_channels: usize,
    /// Width of the projected low-level features in the decoder.
    pub low_level_channels: usize,
    pub decoder_channels: usize,
    pub norm_groups: usize,
}

impl Default for EnsemblerConfig {
    fn default() -> Self {
        Self {
            stage_widths: vec![128, 256, 256],
            stage_dilations: vec![vec![1, 2], vec![1, 2, 4], vec![1, 2, 4]],
            context_rates: vec![2, 4, 8],
            context_channels: 128,
            low_level_channels: 32,
            decoder_channels: 64,
            norm_groups: 8,
        }
    }
}

impl EnsemblerConfig {
    /// Same block and dilation structure at a width that trains in minutes
    /// on one CPU core.
    pub fn desk() -> Self {
        Self {
            stage_widths: vec![32, 48, 48],
            context_channels: 32,
            low_level_channels: 16,
            decoder_channels: 32,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stage_widths.is_empty() || self.stage_widths.len() != self.stage_dilations.len() {
            return Err(Error::config("every ensembler stage needs a width and a dilation list"));
        }
        if self.stage_dilations.iter().any(|d| d.is_empty() || d.contains(&0)) {
            return Err(Error::config("ensembler stages need at least one block with positive dilation"));
        }
        if self.context_rates.contains(&0) {
            return Err(Error::config("context rates must be positive"));
        }
        let widths = [self.context_channels, self.low_level_channels, self.decoder_channels];
        if self.stage_widths.contains(&0) || widths.contains(&0) {
            return Err(Error::config("ensembler widths must be positive"));
        }
        Ok(())
    }

    pub fn block_count(&self) -> usize {
        self.stage_dilations.iter().map(Vec::len).sum()
    }

    /// Total downsampling between the guidance grid and the context module.
    pub fn reduction(&self) -> usize {
        1 << (self.stage_widths.len() - 1)
    }
}

#[derive(Debug, Clone)]
struct ResBlock {
    conv1: Conv2d,
    norm1: GroupNorm,
    conv2: Conv2d,
    norm2: GroupNorm,
    shortcut: Option<(Conv2d, GroupNorm)>,
}

impl ResBlock {
    fn new(in_c: usize, out_c: usize, stride: usize, dilation: usize, groups: usize, vb: VarBuilder) -> Result<Self> {
        let shortcut = if in_c != out_c || stride != 1 {
            Some((
                conv(in_c, out_c, 1, stride, 1, vb.pp("shortcut"))?,
                norm(out_c, groups, vb.pp("shortcut_norm"))?,
            ))
        } else {
            None
        };
        Ok(Self {
            conv1: conv(in_c, out_c, 3, stride, dilation, vb.pp("conv1"))?,
            norm1: norm(out_c, groups, vb.pp("conv1_norm"))?,
            conv2: conv(out_c, out_c, 3, 1, dilation, vb.pp("conv2"))?,
            norm2: norm(out_c, groups, vb.pp("conv2_norm"))?,
            shortcut,
        })
    }

    fn forward(&self, xs: &Tensor) -> Result<Tensor> {
        let h = self.norm1.forward(&self.conv1.forward(xs)?)?.relu()?;
        let h = self.norm2.forward(&self.conv2.forward(&h)?)?;
        let skip = match &self.shortcut {
            Some((c, n)) => n.forward(&c.forward(xs)?)?,
            None => xs.clone(),
        };
        Ok((h + skip)?.relu()?)
    }
}

#[derive(Debug, Clone)]
struct ContextModule {
    branches: Vec<ConvNormRelu>,
    pool: Conv2d,
    project: ConvNormRelu,
}

impl ContextModule {
    fn new(in_c: usize, rates: &[usize], out_c: usize, groups: usize, vb: VarBuilder) -> Result<Self> {
        let branches = rates
            .iter()
            .enumerate()
            .map(|(i, &r)| ConvNormRelu::new(in_c, out_c, 3, 1, r, groups, vb.pp(format!("branch{i}"))))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            branches,
            pool: conv(in_c, out_c, 1, 1, 1, vb.pp("pool"))?,
            project: ConvNormRelu::new(out_c * (rates.len() + 1), out_c, 1, 1, 1, groups, vb.pp("project"))?,
        })
    }

    fn forward(&self, xs: &Tensor) -> Result<Tensor> {
        let (m, _, h, w) = xs.dims4()?;
        let mut outs = self
            .branches
            .iter()
            .map(|b| b.forward(xs))
            .collect::<candle::Result<Vec<_>>>()?;
        let pooled = self.pool.forward(&xs.mean_keepdim((2, 3))?)?.relu()?;
        let c = pooled.dims()[1];
        outs.push(pooled.broadcast_as((m, c, h, w))?.contiguous()?);
        Ok(self.project.forward(&Tensor::cat(&outs, 1)?)?)
    }
}

#[derive(Debug, Clone)]
struct Decoder {
    low: ConvNormRelu,
    fuse1: ConvNormRelu,
    fuse2: ConvNormRelu,
    head: Conv2d,
}

/// Gated residual stages, context module and decoder.
#[derive(Debug, Clone)]
pub struct CollaborativeEnsembler {
    config: EnsemblerConfig,
    input_channels: usize,
    blocks: Vec<ResBlock>,
    block_inputs: Vec<usize>,
    context: ContextModule,
    decoder: Decoder,
    gates: Vec<ChannelGate>,
}

impl CollaborativeEnsembler {
    /// `instance_dim == 0` builds an ungated ensembler.
    pub fn new(
        config: &EnsemblerConfig,
        input_channels: usize,
        low_level_in: usize,
        instance_dim: usize,
        vb: VarBuilder,
    ) -> Result<Self> {
        config.validate()?;
        let g = config.norm_groups;
        let mut blocks = Vec::new();
        let mut block_inputs = Vec::new();
        let mut in_c = input_channels;
        for (s, (&width, dilations)) in config.stage_widths.iter().zip(&config.stage_dilations).enumerate() {
            for (b, &d) in dilations.iter().enumerate() {
                let stride = if s > 0 && b == 0 { 2 } else { 1 };
                block_inputs.push(in_c);
                blocks.push(ResBlock::new(in_c, width, stride, d, g, vb.pp(format!("stage{s}.block{b}")))?);
                in_c = width;
            }
        }
        let context = ContextModule::new(in_c, &config.context_rates, config.context_channels, g, vb.pp("context"))?;
        let gated_inputs: Vec<usize> = block_inputs.iter().copied().chain([in_c]).collect();
        let gates = if instance_dim > 0 {
            gated_inputs
                .iter()
                .enumerate()
                .map(|(i, &c)| ChannelGate::new(instance_dim, c, vb.pp(format!("gate{i}"))))
                .collect::<Result<Vec<_>>>()?
        } else {
            Vec::new()
        };
        let vbd = vb.pp("decoder");
        let decoder = Decoder {
            low: ConvNormRelu::new(low_level_in, config.low_level_channels, 1, 1, 1, g, vbd.pp("low"))?,
            fuse1: ConvNormRelu::new(
                config.context_channels + config.low_level_channels,
                config.decoder_channels,
                3,
                1,
                1,
                g,
                vbd.pp("fuse1"),
            )?,
            fuse2: ConvNormRelu::new(config.decoder_channels, config.decoder_channels, 3, 1, 1, g, vbd.pp("fuse2"))?,
            head: conv(config.decoder_channels, 2, 1, 1, 1, vbd.pp("head"))?,
        };
        Ok(Self {
            config: config.clone(),
            input_channels,
            blocks,
            block_inputs,
            context,
            decoder,
            gates,
        })
    }

    pub fn config(&self) -> &EnsemblerConfig {
        &self.config
    }

    pub fn input_channels(&self) -> usize {
        self.input_channels
    }

    /// Channels of every gated input: each residual block, then the context module.
    pub fn gated_channels(&self) -> Vec<usize> {
        let last = *self.config.stage_widths.last().expect("validated");
        self.block_inputs.iter().copied().chain([last]).collect()
    }

    pub fn is_gated(&self) -> bool {
        !self.gates.is_empty()
    }

    /// Per-block gates `(M, C_i)` from `(M, G)` instance guidance.
    pub fn compute_gates(&self, instance: &Tensor) -> Result<Vec<Tensor>> {
        self.gates.iter().map(|g| g.gates(instance)).collect()
    }

    /// Forward for `M` objects.
    ///
    /// `guidance` is `(M, C_in, h, w)`, `low_level` is `(1 | M, C_low, h, w)`
    /// on the same grid, and `gates` (if any) holds one `(M, C_i)` tensor per
    /// entry of [`Self::gated_channels`]. Returns `(M, 2, out_h, out_w)`
    /// logits with channel 0 foreground and channel 1 background.
    pub fn forward(
        &self,
        guidance: &Tensor,
        low_level: &Tensor,
        gates: Option<&[Tensor]>,
        output_size: (usize, usize),
    ) -> Result<Tensor> {
        let (m, c, h, w) = guidance.dims4()?;
        if c != self.input_channels {
            return Err(Error::input(format!(
                "guidance has {c} channels, ensembler expects {}",
                self.input_channels
            )));
        }
        if let Some(g) = gates {
            if g.len() != self.block_inputs.len() + 1 {
                return Err(Error::input(format!("expected {} gates, got {}", self.block_inputs.len() + 1, g.len())));
            }
        }
        let gate = |i: usize, xs: Tensor| -> Result<Tensor> {
            match gates {
                Some(g) => apply_gate(&xs, &g[i]),
                None => Ok(xs),
            }
        };
        let mut xs = guidance.clone();
        for (i, block) in self.blocks.iter().enumerate() {
            xs = block.forward(&gate(i, xs)?)?;
        }
        let xs = self.context.forward(&gate(self.blocks.len(), xs)?)?;

        let (lb, _, lh, lw) = low_level.dims4()?;
        if (lh, lw) != (h, w) || (lb != 1 && lb != m) {
            return Err(Error::input("low-level features are not aligned with the guidance"));
        }
        let low = self.decoder.low.forward(low_level)?;
        let low = if lb == m {
            low
        } else {
            let lc = low.dims()[1];
            low.broadcast_as((m, lc, h, w))?.contiguous()?
        };
        let up = resize_bilinear(&xs, h, w)?;
        let xs = self.decoder.fuse1.forward(&Tensor::cat(&[&up, &low], 1)?)?;
        let xs = self.decoder.fuse2.forward(&xs)?;
        let logits = self.decoder.head.forward(&xs)?;
        resize_bilinear(&logits, output_size.0, output_size.1)
    }
}

/// Runs the ensembler for one object's guidance `(C_in, h, w)` with gates
/// computed from its instance guidance (or ungated when `instance` is `None`).
pub fn run_ensembler(
    ensembler: &CollaborativeEnsembler,
    guidance: &crate::matching::PixelGuidance,
    low_level: &Tensor,
    instance: Option<&crate::attention::InstanceGuidance>,
    output_size: (usize, usize),
) -> Result<Tensor> {
    let gates = match instance {
        Some(inst) if ensembler.is_gated() => Some(ensembler.compute_gates(&inst.tensor().unsqueeze(0)?)?),
        _ => None,
    };
    let low = if low_level.rank() == 3 { low_level.unsqueeze(0)? } else { low_level.clone() };
    ensembler
        .forward(&guidance.tensor().unsqueeze(0)?, &low, gates.as_deref(), output_size)?
        .squeeze(0)
        .map_err(Into::into)
}
