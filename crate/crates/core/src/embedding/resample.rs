//! Bilinear and nearest-neighbour resampling shared by frames, label maps,
//! probability maps and feature tensors.
//!
//! All bilinear resampling uses half-pixel centres (`src = (dst + 0.5) * in / out - 0.5`),
//! clamped at the borders. The tensor variant is expressed as two matrix products
//! so it stays differentiable.

use candle::{DType, Tensor};

use crate::error::Result;

/// One output sample of a 1-D linear interpolation: `(lo, hi, weight_of_hi)`.
pub(crate) type Tap = (usize, usize, f64);

pub(crate) fn linear_taps(in_len: usize, out_len: usize) -> Vec<Tap> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|i| {
            let src = ((i as f64 + 0.5) * scale - 0.5).max(0.0);
            let lo = (src.floor() as usize).min(in_len - 1);
            let hi = (lo + 1).min(in_len - 1);
            let frac = if hi == lo { 0.0 } else { src - lo as f64 };
            (lo, hi, frac)
        })
        .collect()
}

/// Row-major `out_len x in_len` interpolation matrix.
pub(crate) fn interpolation_matrix(in_len: usize, out_len: usize) -> Vec<f64> {
    let mut m = vec![0.0; out_len * in_len];
    for (i, (lo, hi, frac)) in linear_taps(in_len, out_len).into_iter().enumerate() {
        m[i * in_len + lo] += 1.0 - frac;
        m[i * in_len + hi] += frac;
    }
    m
}

/// Index of the source sample nearest to output index `i`.
pub fn nearest_index(i: usize, in_len: usize, out_len: usize) -> usize {
    let src = ((i as f64 + 0.5) * in_len as f64 / out_len as f64).floor() as usize;
    src.min(in_len - 1)
}

/// Bilinearly resizes the last two dimensions of `x`.
///
/// Implemented with plain 2-D matmuls, so gradients flow through it.
pub fn resize_bilinear(x: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let dims = x.dims().to_vec();
    let rank = dims.len();
    if rank < 2 {
        return Err(crate::Error::input("resize needs at least two dimensions"));
    }
    let (h, w) = (dims[rank - 2], dims[rank - 1]);
    if h == out_h && w == out_w {
        return Ok(x.clone());
    }
    let lead: usize = dims[..rank - 2].iter().product();
    let dtype = x.dtype();
    let device = x.device();

    let to_tensor = |data: Vec<f64>, rows: usize, cols: usize| -> Result<Tensor> {
        Ok(Tensor::from_vec(data, (rows, cols), device)?.to_dtype(dtype)?)
    };
    // (w -> out_w) then (h -> out_h), each as `rows @ M^T`.
    let rx_t = to_tensor(interpolation_matrix(w, out_w), out_w, w)?.t()?.contiguous()?;
    let ry_t = to_tensor(interpolation_matrix(h, out_h), out_h, h)?.t()?.contiguous()?;

    let xs = x.contiguous()?.reshape((lead * h, w))?.matmul(&rx_t)?;
    let xs = xs
        .reshape((lead, h, out_w))?
        .transpose(1, 2)?
        .contiguous()?
        .reshape((lead * out_w, h))?
        .matmul(&ry_t)?;
    let xs = xs
        .reshape((lead, out_w, out_h))?
        .transpose(1, 2)?
        .contiguous()?;
    let mut out_dims = dims[..rank - 2].to_vec();
    out_dims.extend([out_h, out_w]);
    Ok(xs.reshape(out_dims)?)
}

/// Bilinear resize of `planes` stacked `h x w` channel planes (CHW layout).
pub fn resize_planes_bilinear(
    data: &[f32],
    planes: usize,
    h: usize,
    w: usize,
    out_h: usize,
    out_w: usize,
) -> Vec<f32> {
    debug_assert_eq!(data.len(), planes * h * w);
    if h == out_h && w == out_w {
        return data.to_vec();
    }
    let ty = linear_taps(h, out_h);
    let tx = linear_taps(w, out_w);
    let mut out = vec![0.0f32; planes * out_h * out_w];
    for p in 0..planes {
        let src = &data[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * out_h * out_w..(p + 1) * out_h * out_w];
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let top = src[y0 * w + x0] as f64 * (1.0 - fx) + src[y0 * w + x1] as f64 * fx;
                let bot = src[y1 * w + x0] as f64 * (1.0 - fx) + src[y1 * w + x1] as f64 * fx;
                dst[oy * out_w + ox] = (top * (1.0 - fy) + bot * fy) as f32;
            }
        }
    }
    out
}

/// Mirrors each `h x w` plane left to right.
pub fn flip_planes_horizontal(data: &[f32], planes: usize, h: usize, w: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; data.len()];
    for p in 0..planes {
        for y in 0..h {
            let row = (p * h + y) * w;
            for x in 0..w {
                out[row + x] = data[row + w - 1 - x];
            }
        }
    }
    out
}

pub(crate) fn tensor_from_f64(data: Vec<f64>, shape: &[usize], like: &Tensor) -> Result<Tensor> {
    let t = Tensor::from_vec(data, shape, like.device())?;
    Ok(if like.dtype() == DType::F64 { t } else { t.to_dtype(like.dtype())? })
}
