use candle::{DType, Tensor, D};

use crate::error::{Error, Result};

fn check_ratio(ratio: f64) -> Result<()> {
    if ratio > 0.0 && ratio <= 1.0 {
        Ok(())
    } else {
        Err(Error::config(format!("bootstrap ratio must be in (0, 1], got {ratio}")))
    }
}

/// Number of pixels kept by the bootstrap: `ceil(ratio * pixels)`, at least one.
pub fn bootstrap_count(pixels: usize, ratio: f64) -> Result<usize> {
    check_ratio(ratio)?;
    // The small slack keeps e.g. 0.15 * 20 from rounding up to 4.
    Ok(((ratio * pixels as f64 - 1e-9).ceil() as usize).clamp(1, pixels.max(1)))
}

/// Indices of the `k` largest losses, largest first; ties go to the lower index.
pub fn hardest_pixels(losses: &[f64], k: usize) -> Vec<u32> {
    let mut order: Vec<u32> = (0..losses.len() as u32).collect();
    order.sort_by(|&a, &b| {
        losses[b as usize]
            .total_cmp(&losses[a as usize])
            .then(a.cmp(&b))
    });
    order.truncate(k);
    order
}

/// Per-pixel cross-entropy `-log softmax(logits)[target]` for `(C, H, W)`
/// class logits, returned as a `(H * W,)` tensor.
pub fn pixel_cross_entropy(logits: &Tensor, targets: &[u32]) -> Result<Tensor> {
    let (c, h, w) = logits.dims3()?;
    if targets.len() != h * w {
        return Err(Error::input(format!("{} targets for {h}x{w} logits", targets.len())));
    }
    if let Some(&t) = targets.iter().find(|&&t| t as usize >= c) {
        return Err(Error::input(format!("target class {t} out of range for {c} channels")));
    }
    let log_probs = candle_nn::ops::log_softmax(&logits.reshape((c, h * w))?.t()?, D::Minus1)?;
    let idx = Tensor::from_vec(targets.to_vec(), (h * w, 1), logits.device())?;
    Ok(log_probs.gather(&idx, 1)?.squeeze(1)?.neg()?)
}

/// Mean of the `ceil(ratio * P)` largest entries of a `(P,)` loss tensor.
pub fn bootstrapped_mean(losses: &Tensor, ratio: f64) -> Result<Tensor> {
    let values = losses.to_dtype(DType::F64)?.to_vec1::<f64>()?;
    let k = bootstrap_count(values.len(), ratio)?;
    let idx = Tensor::new(hardest_pixels(&values, k), losses.device())?;
    Ok(losses.index_select(&idx, 0)?.mean_all()?)
}

/// Bootstrapped cross-entropy over `(C, H, W)` class logits.
pub fn bootstrapped_ce_loss(logits: &Tensor, targets: &[u32], ratio: f64) -> Result<Tensor> {
    check_ratio(ratio)?;
    bootstrapped_mean(&pixel_cross_entropy(logits, targets)?, ratio)
}

/// The same loss for probabilities already on the simplex, `(C, P)` row-major.
pub fn bootstrapped_ce_from_probabilities(probabilities: &[f64], classes: usize, targets: &[u32], ratio: f64) -> Result<f64> {
    let pixels = targets.len();
    if probabilities.len() != classes * pixels {
        return Err(Error::input("probability buffer does not match the targets"));
    }
    let losses: Vec<f64> = targets
        .iter()
        .enumerate()
        .map(|(p, &t)| -probabilities[t as usize * pixels + p].max(f64::MIN_POSITIVE).ln())
        .collect();
    let k = bootstrap_count(pixels, ratio)?;
    Ok(hardest_pixels(&losses, k).iter().map(|&i| losses[i as usize]).sum::<f64>() / k as f64)
}
