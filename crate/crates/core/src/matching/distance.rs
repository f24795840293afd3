use candle::{DType, Device, Tensor};

use crate::error::{Error, Result};

/// The exponent `||e_p - e_q||^2 + bias` is clamped to `[-EXPONENT_CLAMP, EXPONENT_CLAMP]`.
pub const EXPONENT_CLAMP: f64 = 50.0;

/// `1 - 2 / (1 + exp(d2 + bias))` for a precomputed squared distance `d2`.
///
/// Increasing in both arguments, with range `[-1, 1]` (the open interval
/// before floating-point saturation at the clamp).
pub fn biased_distance(squared_distance: f64, bias: f64) -> f64 {
    let x = (squared_distance + bias).clamp(-EXPONENT_CLAMP, EXPONENT_CLAMP);
    1.0 - 2.0 / (1.0 + x.exp())
}

/// Distance between two pixel embeddings under a foreground or background bias.
pub fn pairwise_distance(e_p: &[f64], e_q: &[f64], bias: f64) -> f64 {
    debug_assert_eq!(e_p.len(), e_q.len());
    let d2: f64 = e_p.iter().zip(e_q).map(|(a, b)| (a - b) * (a - b)).sum();
    biased_distance(d2, bias)
}

/// Tensor form of [`biased_distance`]; `bias` broadcasts against `squared`.
pub fn biased_distance_tensor(squared: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let x = squared
        .broadcast_add(bias)?
        .clamp(-EXPONENT_CLAMP, EXPONENT_CLAMP)?;
    Ok(((x.exp()? + 1.0)?.recip()? * -2.0)?.affine(1.0, 1.0)?)
}

/// The trainable foreground and background biases, stored as a `(2,)`
/// tensor `[b_F, b_B]`.
#[derive(Clone, Debug)]
pub struct BiasPair {
    values: Tensor,
}

impl BiasPair {
    pub const FOREGROUND: usize = 0;
    pub const BACKGROUND: usize = 1;

    pub fn new(foreground: f64, background: f64, device: &Device, dtype: DType) -> Result<Self> {
        let values = Tensor::new(&[foreground, background], device)?.to_dtype(dtype)?;
        Ok(Self { values })
    }

    pub fn zeros(device: &Device, dtype: DType) -> Result<Self> {
        Self::new(0.0, 0.0, device, dtype)
    }

    pub fn from_tensor(values: Tensor) -> Result<Self> {
        if values.dims() != [2] {
            return Err(Error::input(format!("bias pair must have shape (2,), got {:?}", values.dims())));
        }
        Ok(Self { values })
    }

    pub fn tensor(&self) -> &Tensor {
        &self.values
    }

    pub fn foreground(&self) -> Result<f64> {
        Ok(self.values.get(Self::FOREGROUND)?.to_dtype(DType::F64)?.to_scalar()?)
    }

    pub fn background(&self) -> Result<f64> {
        Ok(self.values.get(Self::BACKGROUND)?.to_dtype(DType::F64)?.to_scalar()?)
    }
}
