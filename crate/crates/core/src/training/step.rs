use candle::Tensor;
use serde::{Deserialize, Serialize};

use super::crop::TrainSample;
use super::loss::bootstrapped_ce_loss;
use super::optim::Sgd;
use crate::embedding::resample::resize_bilinear;
use crate::embedding::LabelMap;
use crate::ensembler::{aggregate_objects, stack_object_logits};
use crate::error::{Error, Result};
use crate::model::{Cfbi, ObjectContext};

/// How a step's prediction is fed to the next step as its previous mask.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeedbackMode {
    /// The argmax labels, with no gradient path between steps.
    #[default]
    Detached,
    /// The argmax labels for matching, plus the softmax probabilities as the
    /// previous-mask channel so gradients cross step boundaries.
    Soft,
}

/// Forward pass over one sample.
#[derive(Debug)]
pub struct SampleForward {
    /// Mean of the per-step losses, still attached to the graph.
    pub loss: Tensor,
    pub step_losses: Vec<f64>,
    /// Argmax prediction of every step.
    pub predictions: Vec<LabelMap>,
    /// Previous-frame labels fed to every step.
    pub fed_back: Vec<LabelMap>,
}

/// Class index per pixel: 0 for background, `i + 1` for `object_ids[i]`.
pub fn class_targets(labels: &LabelMap, object_ids: &[u8]) -> Vec<u32> {
    labels
        .labels()
        .iter()
        .map(|&l| object_ids.iter().position(|&id| id == l && l != 0).map_or(0, |i| i as u32 + 1))
        .collect()
}

/// Runs the `N` successive predictions of one sample. Step 1 sees the
/// ground-truth previous mask, later steps the preceding prediction.
pub fn sample_forward(model: &Cfbi, sample: &TrainSample, bootstrap_ratio: f64, feedback: FeedbackMode) -> Result<SampleForward> {
    let ids = &sample.object_ids;
    if ids.is_empty() {
        return Err(Error::input("training sample has no objects"));
    }
    let frames: Vec<_> = sample.frames().map(|(f, _)| f).collect();
    let features = model.encode(&frames)?;
    let (h, w) = (sample.reference.0.height(), sample.reference.0.width());

    let mut previous_labels = sample.previous.1.clone();
    let mut previous_mask: Option<Tensor> = None;
    let mut losses = Vec::with_capacity(sample.current.len());
    let mut out = SampleForward {
        loss: Tensor::zeros((), model.dtype(), model.device())?,
        step_losses: Vec::new(),
        predictions: Vec::new(),
        fed_back: Vec::new(),
    };
    for (j, (_, target)) in sample.current.iter().enumerate() {
        let ctx = ObjectContext {
            reference: &features[0],
            reference_labels: &sample.reference.1,
            previous: &features[j + 1],
            previous_labels: &previous_labels,
            previous_mask: previous_mask.as_ref(),
            object_ids: ids,
        };
        let logits = model.predict(&ctx, &features[j + 2], (h, w))?;
        let stacked = stack_object_logits(&logits)?;
        let loss = bootstrapped_ce_loss(&stacked, &class_targets(target, ids), bootstrap_ratio)?;
        out.step_losses.push(loss.to_dtype(candle::DType::F64)?.to_scalar::<f64>()?);
        losses.push(loss);

        let predicted = aggregate_objects(&logits.detach(), ids)?.labels;
        out.fed_back.push(std::mem::replace(&mut previous_labels, predicted.clone()));
        out.predictions.push(predicted);
        previous_mask = match feedback {
            FeedbackMode::Detached => None,
            FeedbackMode::Soft => {
                let probs = candle_nn::ops::softmax(&stacked, 0)?.narrow(0, 1, ids.len())?;
                let e = &features[j + 2].embedding;
                Some(resize_bilinear(&probs, e.height(), e.width())?.unsqueeze(1)?)
            }
        };
    }
    out.loss = (Tensor::stack(&losses, 0)?.mean_all())?;
    Ok(out)
}

/// Result of one optimizer update.
#[derive(Clone, Debug, PartialEq)]
pub struct StepReport {
    /// Loss averaged over steps and samples.
    pub loss: f64,
    /// Per-step losses averaged over the samples.
    pub step_losses: Vec<f64>,
}

/// Forward over every sample, one backward pass, one optimizer update.
pub fn sequential_train_step(
    model: &Cfbi,
    optimizer: &mut Sgd,
    samples: &[TrainSample],
    bootstrap_ratio: f64,
    feedback: FeedbackMode,
) -> Result<StepReport> {
    if samples.is_empty() {
        return Err(Error::input("empty training batch"));
    }
    let mut total: Option<Tensor> = None;
    let mut step_losses: Vec<f64> = Vec::new();
    for sample in samples {
        let f = sample_forward(model, sample, bootstrap_ratio, feedback)?;
        if step_losses.is_empty() {
            step_losses = vec![0.0; f.step_losses.len()];
        }
        for (acc, l) in step_losses.iter_mut().zip(&f.step_losses) {
            *acc += l / samples.len() as f64;
        }
        total = Some(match total {
            Some(t) => (t + f.loss)?,
            None => f.loss,
        });
    }
    let total = (total.expect("non-empty batch") / samples.len() as f64)?;
    let loss = total.to_dtype(candle::DType::F64)?.to_scalar::<f64>()?;
    if !loss.is_finite() {
        return Err(Error::Numeric(format!("training loss is {loss}")));
    }
    optimizer.step(&total.backward()?)?;
    Ok(StepReport { loss, step_losses })
}
