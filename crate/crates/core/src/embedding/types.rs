use candle::{DType, Device, Tensor};
use image::{GrayImage, RgbImage};

use super::resample::{linear_taps, nearest_index};
use crate::error::{Error, Result};

/// An RGB frame with values in `[0, 1]`, stored row-major and channel-interleaved.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Frame {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::input("frame must be non-empty"));
        }
        if data.len() != height * width * 3 {
            return Err(Error::input(format!(
                "frame data has {} values, expected {}x{}x3",
                data.len(),
                height,
                width
            )));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0) {
            return Err(Error::input(format!("frame value {v} outside [0, 1]")));
        }
        Ok(Self { height, width, data })
    }

    pub fn filled(height: usize, width: usize, rgb: [f32; 3]) -> Result<Self> {
        let data = (0..height * width).flat_map(|_| rgb).collect();
        Self::new(height, width, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn from_rgb8(img: &RgbImage) -> Self {
        let data = img.as_raw().iter().map(|&v| v as f32 / 255.0).collect();
        Self {
            height: img.height() as usize,
            width: img.width() as usize,
            data,
        }
    }

    pub fn to_rgb8(&self) -> RgbImage {
        let raw = self.data.iter().map(|v| (v * 255.0).round() as u8).collect();
        RgbImage::from_raw(self.width as u32, self.height as u32, raw)
            .expect("buffer length matches dimensions")
    }

    /// `(3, H, W)` tensor.
    pub fn to_tensor(&self, device: &Device, dtype: DType) -> Result<Tensor> {
        let t = Tensor::from_slice(&self.data, (self.height, self.width, 3), device)?
            .permute((2, 0, 1))?
            .contiguous()?;
        Ok(t.to_dtype(dtype)?)
    }

    pub fn crop(&self, y0: usize, x0: usize, height: usize, width: usize) -> Result<Self> {
        if y0 + height > self.height || x0 + width > self.width {
            return Err(Error::input("crop window exceeds frame"));
        }
        let mut data = Vec::with_capacity(height * width * 3);
        for y in y0..y0 + height {
            let row = (y * self.width + x0) * 3;
            data.extend_from_slice(&self.data[row..row + width * 3]);
        }
        Ok(Self { height, width, data })
    }

    pub fn flip_horizontal(&self) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for y in 0..self.height {
            for x in (0..self.width).rev() {
                let i = (y * self.width + x) * 3;
                data.extend_from_slice(&self.data[i..i + 3]);
            }
        }
        Self { data, ..*self }
    }

    pub fn resize_bilinear(&self, height: usize, width: usize) -> Self {
        if height == self.height && width == self.width {
            return self.clone();
        }
        let ty = linear_taps(self.height, height);
        let tx = linear_taps(self.width, width);
        let mut data = Vec::with_capacity(height * width * 3);
        for &(y0, y1, fy) in &ty {
            for &(x0, x1, fx) in &tx {
                for c in 0..3 {
                    let at = |y: usize, x: usize| self.data[(y * self.width + x) * 3 + c] as f64;
                    let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
                    let bot = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
                    data.push(((top * (1.0 - fy) + bot * fy) as f32).clamp(0.0, 1.0));
                }
            }
        }
        Self { height, width, data }
    }
}

/// Integer object-id map. `0` is background; ids need not be contiguous.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct LabelMap {
    height: usize,
    width: usize,
    labels: Vec<u8>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, labels: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::input("label map must be non-empty"));
        }
        if labels.len() != height * width {
            return Err(Error::input(format!(
                "label map has {} values, expected {}x{}",
                labels.len(),
                height,
                width
            )));
        }
        Ok(Self { height, width, labels })
    }

    pub fn filled(height: usize, width: usize, id: u8) -> Self {
        Self {
            height,
            width,
            labels: vec![id; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.labels[y * self.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize, id: u8) {
        self.labels[y * self.width + x] = id;
    }

    /// Sorted non-zero ids present in the map.
    pub fn object_ids(&self) -> Vec<u8> {
        let mut seen = [false; 256];
        for &l in &self.labels {
            seen[l as usize] = true;
        }
        (1..=255u8).filter(|&i| seen[i as usize]).collect()
    }

    pub fn count(&self, id: u8) -> usize {
        self.labels.iter().filter(|&&l| l == id).count()
    }

    pub fn foreground_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l != 0).count()
    }

    pub fn binary_mask(&self, id: u8) -> Vec<bool> {
        self.labels.iter().map(|&l| l == id).collect()
    }

    pub fn from_luma8(img: &GrayImage) -> Self {
        Self {
            height: img.height() as usize,
            width: img.width() as usize,
            labels: img.as_raw().clone(),
        }
    }

    pub fn to_luma8(&self) -> GrayImage {
        GrayImage::from_raw(self.width as u32, self.height as u32, self.labels.clone())
            .expect("buffer length matches dimensions")
    }

    pub fn crop(&self, y0: usize, x0: usize, height: usize, width: usize) -> Result<Self> {
        if y0 + height > self.height || x0 + width > self.width {
            return Err(Error::input("crop window exceeds label map"));
        }
        let labels = (y0..y0 + height)
            .flat_map(|y| self.labels[y * self.width + x0..y * self.width + x0 + width].iter().copied())
            .collect();
        Ok(Self { height, width, labels })
    }

    pub fn flip_horizontal(&self) -> Self {
        let labels = (0..self.height)
            .flat_map(|y| (0..self.width).rev().map(move |x| (y, x)))
            .map(|(y, x)| self.get(y, x))
            .collect();
        Self { labels, ..*self }
    }

    pub fn resize_nearest(&self, height: usize, width: usize) -> Self {
        if height == self.height && width == self.width {
            return self.clone();
        }
        let ys: Vec<usize> = (0..height).map(|i| nearest_index(i, self.height, height)).collect();
        let xs: Vec<usize> = (0..width).map(|i| nearest_index(i, self.width, width)).collect();
        let labels = ys
            .iter()
            .flat_map(|&y| xs.iter().map(move |&x| (y, x)))
            .map(|(y, x)| self.get(y, x))
            .collect();
        Self { height, width, labels }
    }

    /// Nearest-neighbour downsample onto the `ceil(H/s) x ceil(W/s)` grid of an
    /// embedding with stride `s`. Never introduces new ids.
    pub fn downsample(&self, stride: usize) -> Result<Self> {
        if stride == 0 {
            return Err(Error::input("stride must be positive"));
        }
        if self.height < stride || self.width < stride {
            return Err(Error::input(format!(
                "label map {}x{} smaller than stride {stride}",
                self.height, self.width
            )));
        }
        Ok(self.resize_nearest(self.height.div_ceil(stride), self.width.div_ceil(stride)))
    }

    /// Replaces every id not in `keep` by background.
    pub fn retain_ids(&self, keep: &[u8]) -> Self {
        let labels = self
            .labels
            .iter()
            .map(|&l| if keep.contains(&l) { l } else { 0 })
            .collect();
        Self { labels, ..*self }
    }

    /// `(1, h, w)` float mask of pixels equal to `id`.
    pub fn mask_tensor(&self, id: u8, device: &Device, dtype: DType) -> Result<Tensor> {
        let data: Vec<f32> = self.labels.iter().map(|&l| (l == id) as u8 as f32).collect();
        Ok(Tensor::from_vec(data, (1, self.height, self.width), device)?.to_dtype(dtype)?)
    }
}

/// Per-pixel embedding grid, `(C, h, w)`, at a fixed stride of the source frame.
#[derive(Clone, Debug)]
pub struct EmbeddingMap {
    values: Tensor,
    stride: usize,
}

impl EmbeddingMap {
    pub fn new(values: Tensor, stride: usize) -> Result<Self> {
        if values.rank() != 3 {
            return Err(Error::input(format!(
                "embedding must be (C, h, w), got {:?}",
                values.dims()
            )));
        }
        if stride == 0 {
            return Err(Error::input("stride must be positive"));
        }
        let finite = values
            .flatten_all()?
            .to_dtype(DType::F64)?
            .to_vec1::<f64>()?
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::Numeric("non-finite embedding value".into()));
        }
        Ok(Self { values, stride })
    }

    /// Builds a map from channel-interleaved `(h, w, C)` values.
    pub fn from_hwc(data: Vec<f64>, height: usize, width: usize, channels: usize, stride: usize) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::input("embedding data length mismatch"));
        }
        let t = Tensor::from_vec(data, (height, width, channels), &Device::Cpu)?
            .permute((2, 0, 1))?
            .contiguous()?;
        Self::new(t, stride)
    }

    pub fn tensor(&self) -> &Tensor {
        &self.values
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn channels(&self) -> usize {
        self.values.dims()[0]
    }

    pub fn height(&self) -> usize {
        self.values.dims()[1]
    }

    pub fn width(&self) -> usize {
        self.values.dims()[2]
    }

    /// `(h*w, C)` row view, one row per pixel in row-major order.
    pub fn rows(&self) -> Result<Tensor> {
        let c = self.channels();
        Ok(self.values.reshape((c, self.height() * self.width()))?.t()?.contiguous()?)
    }

    /// Bilinear downsample by `factor`; the stride scales accordingly.
    pub fn downsample(&self, factor: usize) -> Result<Self> {
        if factor == 0 {
            return Err(Error::input("factor must be positive"));
        }
        let (h, w) = (self.height(), self.width());
        if h < factor || w < factor {
            return Err(Error::input(format!("embedding {h}x{w} too small to downsample by {factor}")));
        }
        let values = super::resample::resize_bilinear(&self.values, h.div_ceil(factor), w.div_ceil(factor))?;
        Ok(Self {
            values,
            stride: self.stride * factor,
        })
    }
}
