//! Helpers shared by the integration tests: brute-force matching oracles,
//! a central finite-difference checker and small data builders.

#![allow(dead_code)]

pub mod gradcases;

use candle::{DType, Device, Tensor, Var};
use rand::Rng;

use cfbi::embedding::{EmbeddingMap, LabelMap};

/// `1 - 2 / (1 + e^x)` written as `tanh(x / 2)`.
pub fn oracle_distance(e_p: &[f64], e_q: &[f64], bias: f64) -> f64 {
    let d2: f64 = e_p.iter().zip(e_q).map(|(a, b)| (a - b).powi(2)).sum();
    ((d2 + bias) / 2.0).tanh()
}

/// Channel-interleaved embedding grid used by the oracles.
#[derive(Clone, Debug)]
pub struct Grid {
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub data: Vec<f64>,
}

impl Grid {
    pub fn random(rng: &mut impl Rng, h: usize, w: usize, c: usize, scale: f64) -> Self {
        let data = (0..h * w * c).map(|_| rng.random_range(-scale..scale)).collect();
        Self { h, w, c, data }
    }

    pub fn at(&self, y: usize, x: usize) -> &[f64] {
        &self.data[(y * self.w + x) * self.c..][..self.c]
    }

    pub fn to_map(&self) -> EmbeddingMap {
        EmbeddingMap::from_hwc(self.data.clone(), self.h, self.w, self.c, 1).unwrap()
    }
}

pub fn random_labels(rng: &mut impl Rng, h: usize, w: usize, max_id: u8) -> LabelMap {
    LabelMap::new(h, w, (0..h * w).map(|_| rng.random_range(0..=max_id)).collect()).unwrap()
}

fn min_or_one(values: impl Iterator<Item = f64>) -> f64 {
    values.fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.min(v)))).unwrap_or(1.0)
}

/// Global foreground and background maps by exhaustive double loop, `h*w` each.
pub fn oracle_global(cur: &Grid, reference: &Grid, labels: &LabelMap, id: u8, b_f: f64, b_b: f64) -> (Vec<f64>, Vec<f64>) {
    let mut fg = Vec::new();
    let mut bg = Vec::new();
    for py in 0..cur.h {
        for px in 0..cur.w {
            let p = cur.at(py, px);
            let pairs = || (0..reference.h).flat_map(|qy| (0..reference.w).map(move |qx| (qy, qx)));
            fg.push(min_or_one(
                pairs().filter(|&(qy, qx)| labels.get(qy, qx) == id).map(|(qy, qx)| oracle_distance(p, reference.at(qy, qx), b_f)),
            ));
            bg.push(min_or_one(
                pairs().filter(|&(qy, qx)| labels.get(qy, qx) != id).map(|(qy, qx)| oracle_distance(p, reference.at(qy, qx), b_b)),
            ));
        }
    }
    (fg, bg)
}

/// Local maps for one radius by scanning the Chebyshev window directly.
pub fn oracle_local(cur: &Grid, prev: &Grid, labels: &LabelMap, id: u8, k: usize, b_f: f64, b_b: f64) -> (Vec<f64>, Vec<f64>) {
    let mut fg = Vec::new();
    let mut bg = Vec::new();
    for py in 0..cur.h {
        for px in 0..cur.w {
            let p = cur.at(py, px);
            let mut window = Vec::new();
            for qy in 0..prev.h {
                for qx in 0..prev.w {
                    if py.abs_diff(qy) <= k && px.abs_diff(qx) <= k {
                        window.push((qy, qx));
                    }
                }
            }
            fg.push(min_or_one(
                window.iter().filter(|&&(qy, qx)| labels.get(qy, qx) == id).map(|&(qy, qx)| oracle_distance(p, prev.at(qy, qx), b_f)),
            ));
            bg.push(min_or_one(
                window.iter().filter(|&&(qy, qx)| labels.get(qy, qx) != id).map(|&(qy, qx)| oracle_distance(p, prev.at(qy, qx), b_b)),
            ));
        }
    }
    (fg, bg)
}

pub fn flat(t: &Tensor) -> Vec<f64> {
    t.flatten_all().unwrap().to_dtype(DType::F64).unwrap().to_vec1::<f64>().unwrap()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Outcome of comparing analytic and numeric derivatives.
#[derive(Debug, Default)]
pub struct GradCheck {
    /// Coordinates with a non-negligible derivative that were compared relatively.
    pub checked: usize,
    pub max_rel_err: f64,
    /// Largest absolute mismatch over coordinates whose derivative is ~0.
    pub max_abs_err_flat: f64,
    /// Coordinates skipped because the difference quotient straddles a kink.
    pub kinks: usize,
}

impl GradCheck {
    pub fn merge(&mut self, other: GradCheck) {
        self.checked += other.checked;
        self.max_rel_err = self.max_rel_err.max(other.max_rel_err);
        self.max_abs_err_flat = self.max_abs_err_flat.max(other.max_abs_err_flat);
        self.kinks += other.kinks;
    }

    pub fn passes(&self, min_points: usize, tol: f64) -> bool {
        // Kinks must stay rare, otherwise the comparison says little.
        self.checked >= min_points && self.max_rel_err <= tol && self.max_abs_err_flat <= 1e-7 && self.kinks * 10 <= self.checked
    }
}

pub const FD_EPS: f64 = 1e-6;
/// Derivatives below this magnitude are compared absolutely, not relatively.
pub const FLAT: f64 = 1e-6;

/// Central differences of `loss` with respect to the entries `indices` of `var`,
/// compared against `analytic` (the full flattened gradient of `var`).
pub fn check_var(var: &Var, analytic: &[f64], indices: &[usize], loss: &mut dyn FnMut() -> f64) -> GradCheck {
    let original = var.as_tensor().copy().unwrap();
    let dims = original.dims().to_vec();
    let base = flat(&original);
    let mut out = GradCheck::default();
    for &i in indices {
        let mut eval = |delta: f64| {
            let mut v = base.clone();
            v[i] += delta;
            var.set(&Tensor::from_vec(v, dims.as_slice(), &Device::Cpu).unwrap().to_dtype(original.dtype()).unwrap()).unwrap();
            loss()
        };
        let mut central = |eps: f64| (eval(eps) - eval(-eps)) / (2.0 * eps);
        let numeric = central(FD_EPS);
        // A smooth loss gives the same quotient at both step sizes up to rounding;
        // a disagreement means a top-k or argmax boundary lies inside the step.
        let fine = central(FD_EPS / 10.0);
        if (numeric - fine).abs() > 1e-5 * numeric.abs().max(fine.abs()) + 1e-8 {
            out.kinks += 1;
            continue;
        }
        let a = analytic[i];
        if a.abs().max(numeric.abs()) < FLAT {
            out.max_abs_err_flat = out.max_abs_err_flat.max((a - numeric).abs());
        } else {
            out.checked += 1;
            out.max_rel_err = out.max_rel_err.max((a - numeric).abs() / a.abs().max(numeric.abs()));
        }
    }
    var.set(&original).unwrap();
    out
}

/// A filled square of `id` on a background canvas.
pub fn square(h: usize, w: usize, y0: usize, x0: usize, side: usize, id: u8) -> LabelMap {
    let mut m = LabelMap::filled(h, w, 0);
    for y in y0..(y0 + side).min(h) {
        for x in x0..(x0 + side).min(w) {
            m.set(y, x, id);
        }
    }
    m
}
