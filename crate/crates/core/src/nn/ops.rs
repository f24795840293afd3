//! CPU custom ops with hand-written backward passes.
//!
//! candle's generic gradients for convolution and group normalisation
//! allocate and reduce full-size temporaries for every tap or broadcast; these
//! two kernels do the same arithmetic in a single pass each way.

use candle::{CpuStorage, CustomOp1, CustomOp3, DType, Layout, Shape, Tensor};

/// Element types the kernels run on.
trait Float: Copy + Default + std::ops::AddAssign + 'static {
    fn to_f64(self) -> f64;
    fn from_f64(v: f64) -> Self;
}

impl Float for f32 {
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn from_f64(v: f64) -> Self {
        v as f32
    }
}

impl Float for f64 {
    fn to_f64(self) -> f64 {
        self
    }
    fn from_f64(v: f64) -> Self {
        v
    }
}

fn contiguous<'a, T>(data: &'a [T], layout: &Layout) -> candle::Result<&'a [T]> {
    let (start, end) = layout
        .contiguous_offsets()
        .ok_or_else(|| candle::Error::Msg("custom op expects contiguous inputs".into()))?;
    Ok(&data[start..end])
}

fn host_vec<T: candle::WithDType>(t: &Tensor) -> candle::Result<Vec<T>> {
    t.flatten_all()?.to_vec1::<T>()
}

/// Geometry of a square "same"-padded convolution window.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Im2Col {
    pub kernel: usize,
    pub stride: usize,
    pub dilation: usize,
    pub padding: usize,
}

impl Im2Col {
    pub(crate) fn output_size(&self, h: usize, w: usize) -> (usize, usize) {
        let span = self.dilation * (self.kernel - 1) + 1;
        (
            (h + 2 * self.padding - span) / self.stride + 1,
            (w + 2 * self.padding - span) / self.stride + 1,
        )
    }

    /// Range of output columns whose source column `ox * stride + offset - padding`
    /// falls inside `0..w`.
    fn valid_range(&self, offset: usize, w: usize, wo: usize) -> (usize, usize) {
        let (s, p) = (self.stride as isize, self.padding as isize);
        let shift = offset as isize - p;
        let lo = if shift >= 0 { 0 } else { (-shift + s - 1) / s };
        let hi = (w as isize - 1 - shift).div_euclid(s) + 1;
        (lo.max(0) as usize, hi.clamp(0, wo as isize) as usize)
    }

    /// Calls `f(column_start, source_start, len)` for every run of output
    /// columns that reads one image row. Columns are laid out
    /// `(c, ky, kx) x (b, oy, ox)`; consecutive outputs read sources `stride` apart.
    fn for_each_run(&self, dims: (usize, usize, usize, usize), mut f: impl FnMut(usize, usize, usize)) {
        let (b, c, h, w) = dims;
        let (ho, wo) = self.output_size(h, w);
        let k = self.kernel;
        let cols = b * ho * wo;
        for ci in 0..c {
            for ky in 0..k {
                let (oy0, oy1) = self.valid_range(ky * self.dilation, h, ho);
                for kx in 0..k {
                    let row = (ci * k + ky) * k + kx;
                    let (ox0, ox1) = self.valid_range(kx * self.dilation, w, wo);
                    if ox0 >= ox1 {
                        continue;
                    }
                    let x0 = ox0 * self.stride + kx * self.dilation - self.padding;
                    for bi in 0..b {
                        let plane = (bi * c + ci) * h * w;
                        for oy in oy0..oy1 {
                            let y = oy * self.stride + ky * self.dilation - self.padding;
                            f(row * cols + (bi * ho + oy) * wo + ox0, plane + y * w + x0, ox1 - ox0);
                        }
                    }
                }
            }
        }
    }

    fn unfold<T: Float>(&self, src: &[T], dims: (usize, usize, usize, usize)) -> Vec<T> {
        let (b, c, h, w) = dims;
        let (ho, wo) = self.output_size(h, w);
        let mut out = vec![T::default(); c * self.kernel * self.kernel * b * ho * wo];
        let s = self.stride;
        self.for_each_run(dims, |dst, src0, n| {
            if s == 1 {
                out[dst..dst + n].copy_from_slice(&src[src0..src0 + n]);
            } else {
                for (i, o) in out[dst..dst + n].iter_mut().enumerate() {
                    *o = src[src0 + i * s];
                }
            }
        });
        out
    }

    fn fold<T: Float>(&self, cols: &[T], dims: (usize, usize, usize, usize)) -> Vec<T> {
        let (b, c, h, w) = dims;
        let mut out = vec![T::default(); b * c * h * w];
        let s = self.stride;
        self.for_each_run(dims, |col, dst0, n| {
            for (i, v) in cols[col..col + n].iter().enumerate() {
                out[dst0 + i * s] += *v;
            }
        });
        out
    }
}

impl CustomOp1 for Im2Col {
    fn name(&self) -> &'static str {
        "im2col"
    }

    fn cpu_fwd(&self, storage: &CpuStorage, layout: &Layout) -> candle::Result<(CpuStorage, Shape)> {
        let (b, c, h, w) = layout.shape().dims4()?;
        let (ho, wo) = self.output_size(h, w);
        let shape = Shape::from((c * self.kernel * self.kernel, b * ho * wo));
        let out = match storage {
            CpuStorage::F32(v) => CpuStorage::F32(self.unfold(contiguous(v, layout)?, (b, c, h, w))),
            CpuStorage::F64(v) => CpuStorage::F64(self.unfold(contiguous(v, layout)?, (b, c, h, w))),
            _ => candle::bail!("im2col supports f32 and f64 only"),
        };
        Ok((out, shape))
    }

    fn bwd(&self, arg: &Tensor, _res: &Tensor, grad_res: &Tensor) -> candle::Result<Option<Tensor>> {
        let dims = arg.dims4()?;
        let grad = match arg.dtype() {
            DType::F32 => Tensor::from_vec(self.fold(&host_vec::<f32>(grad_res)?, dims), dims, arg.device())?,
            DType::F64 => Tensor::from_vec(self.fold(&host_vec::<f64>(grad_res)?, dims), dims, arg.device())?,
            dt => candle::bail!("im2col backward does not support {dt:?}"),
        };
        Ok(Some(grad))
    }
}

/// Group normalisation of a `(B, C, ...)` tensor followed by the
/// per-channel affine map, as one op over `(x, weight, bias)`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct GroupNormOp {
    pub groups: usize,
    pub eps: f64,
}

struct GnDims {
    batch: usize,
    channels: usize,
    spatial: usize,
}

impl GroupNormOp {
    fn per_group(&self, d: &GnDims) -> usize {
        d.channels / self.groups
    }

    /// Mean and reciprocal standard deviation of one group.
    fn moments<T: Float>(row: &[T], eps: f64) -> (f64, f64) {
        let n = row.len() as f64;
        let mean = row.iter().map(|v| v.to_f64()).sum::<f64>() / n;
        let var = row.iter().map(|v| (v.to_f64() - mean).powi(2)).sum::<f64>() / n;
        (mean, 1.0 / (var + eps).sqrt())
    }

    fn forward<T: Float>(&self, x: &[T], w: &[T], b: &[T], d: &GnDims) -> Vec<T> {
        let cg = self.per_group(d);
        let mut out = Vec::with_capacity(x.len());
        for (r, xs) in x.chunks_exact(cg * d.spatial).enumerate() {
            let (mean, rstd) = Self::moments(xs, self.eps);
            let c0 = (r % self.groups) * cg;
            for (ci, plane) in xs.chunks_exact(d.spatial).enumerate() {
                let scale = rstd * w[c0 + ci].to_f64();
                let shift = b[c0 + ci].to_f64() - mean * scale;
                out.extend(plane.iter().map(|v| T::from_f64(v.to_f64() * scale + shift)));
            }
        }
        out
    }

    fn backward<T: Float>(&self, x: &[T], w: &[T], g: &[T], d: &GnDims) -> (Vec<T>, Vec<T>, Vec<T>) {
        let cg = self.per_group(d);
        let row = cg * d.spatial;
        let n = row as f64;
        let mut dx = Vec::with_capacity(x.len());
        let mut dw = vec![0.0f64; d.channels];
        let mut db = vec![0.0f64; d.channels];
        for (r, (xs, gs)) in x.chunks_exact(row).zip(g.chunks_exact(row)).enumerate() {
            let (mean, rstd) = Self::moments(xs, self.eps);
            let c0 = (r % self.groups) * cg;
            // Per channel: sum(g) and sum(g * xhat), from which every other
            // reduction follows.
            let (mut sum_gy, mut sum_gyx) = (0.0, 0.0);
            for (ci, (xp, gp)) in xs.chunks_exact(d.spatial).zip(gs.chunks_exact(d.spatial)).enumerate() {
                let (mut sg, mut sgx) = (0.0, 0.0);
                for (xv, gv) in xp.iter().zip(gp) {
                    let gv = gv.to_f64();
                    sg += gv;
                    sgx += gv * (xv.to_f64() - mean) * rstd;
                }
                let c = c0 + ci;
                db[c] += sg;
                dw[c] += sgx;
                sum_gy += sg * w[c].to_f64();
                sum_gyx += sgx * w[c].to_f64();
            }
            let (mean_gy, mean_gyx) = (sum_gy / n, sum_gyx / n);
            for (ci, (xp, gp)) in xs.chunks_exact(d.spatial).zip(gs.chunks_exact(d.spatial)).enumerate() {
                let wc = w[c0 + ci].to_f64();
                dx.extend(xp.iter().zip(gp).map(|(xv, gv)| {
                    let xh = (xv.to_f64() - mean) * rstd;
                    T::from_f64(rstd * (gv.to_f64() * wc - mean_gy - xh * mean_gyx))
                }));
            }
        }
        let cast = |v: Vec<f64>| v.into_iter().map(T::from_f64).collect();
        (dx, cast(dw), cast(db))
    }

    fn dims(&self, shape: &Shape) -> candle::Result<GnDims> {
        let dims = shape.dims();
        if dims.len() < 2 || !dims[1].is_multiple_of(self.groups) {
            candle::bail!("group norm: {} groups do not divide shape {dims:?}", self.groups);
        }
        Ok(GnDims {
            batch: dims[0],
            channels: dims[1],
            spatial: dims[2..].iter().product(),
        })
    }
}

impl CustomOp3 for GroupNormOp {
    fn name(&self) -> &'static str {
        "group-norm"
    }

    fn cpu_fwd(
        &self,
        s1: &CpuStorage,
        l1: &Layout,
        s2: &CpuStorage,
        l2: &Layout,
        s3: &CpuStorage,
        l3: &Layout,
    ) -> candle::Result<(CpuStorage, Shape)> {
        let d = self.dims(l1.shape())?;
        debug_assert!(d.batch > 0);
        let out = match (s1, s2, s3) {
            (CpuStorage::F32(x), CpuStorage::F32(w), CpuStorage::F32(b)) => {
                CpuStorage::F32(self.forward(contiguous(x, l1)?, contiguous(w, l2)?, contiguous(b, l3)?, &d))
            }
            (CpuStorage::F64(x), CpuStorage::F64(w), CpuStorage::F64(b)) => {
                CpuStorage::F64(self.forward(contiguous(x, l1)?, contiguous(w, l2)?, contiguous(b, l3)?, &d))
            }
            _ => candle::bail!("group norm needs matching f32 or f64 inputs"),
        };
        Ok((out, l1.shape().clone()))
    }

    fn bwd(
        &self,
        x: &Tensor,
        w: &Tensor,
        b: &Tensor,
        _res: &Tensor,
        grad_res: &Tensor,
    ) -> candle::Result<(Option<Tensor>, Option<Tensor>, Option<Tensor>)> {
        let d = self.dims(x.shape())?;
        let dev = x.device();
        macro_rules! run {
            ($t:ty) => {{
                let (dx, dw, db) = self.backward(&host_vec::<$t>(x)?, &host_vec::<$t>(w)?, &host_vec::<$t>(grad_res)?, &d);
                (
                    Tensor::from_vec(dx, x.shape(), dev)?,
                    Tensor::from_vec(dw, w.shape(), dev)?,
                    Tensor::from_vec(db, b.shape(), dev)?,
                )
            }};
        }
        let (dx, dw, db) = match x.dtype() {
            DType::F32 => run!(f32),
            DType::F64 => run!(f64),
            dt => candle::bail!("group norm backward does not support {dt:?}"),
        };
        Ok((Some(dx), Some(dw), Some(db)))
    }
}
