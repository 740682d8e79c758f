use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Continuous pixel coordinate; integers address pixel centers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelCoord {
    pub u: f64,
    pub v: f64,
}

impl PixelCoord {
    pub const fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }
}

/// Row-major raster with 1 or 3 interleaved channels, intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageGrid {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl ImageGrid {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("image dimensions must be non-zero"));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::invalid(format!("unsupported channel count {channels}")));
        }
        if data.len() != width * height * channels {
            return Err(Error::invalid(format!(
                "image data length {} != {width}x{height}x{channels}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite intensity at index {i}")));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Result<Self> {
        Self::new(width, height, channels, vec![value; width * height * channels])
    }

    /// Builds an image by evaluating `f(x, y, c)` at every sample.
    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(x, y, c));
                }
            }
        }
        Self::new(width, height, channels, data)
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// All channels of one pixel.
    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Per-pixel mean over channels, as a single-channel image.
    pub fn channel_mean(&self) -> ImageGrid {
        if self.channels == 1 {
            return self.clone();
        }
        let c = self.channels as f64;
        let data = self
            .data
            .chunks_exact(self.channels)
            .map(|px| px.iter().sum::<f64>() / c)
            .collect();
        ImageGrid {
            width: self.width,
            height: self.height,
            channels: 1,
            data,
        }
    }

    /// 2×2 average pooling; odd trailing rows/columns average what exists.
    pub fn downsample2(&self) -> ImageGrid {
        let (w, h) = (self.width.div_ceil(2), self.height.div_ceil(2));
        let mut data = vec![0.0; w * h * self.channels];
        for y in 0..h {
            for x in 0..w {
                let children = pool_children(x, y, self.width, self.height);
                let n = children.len() as f64;
                for c in 0..self.channels {
                    let s: f64 = children.iter().map(|&(sx, sy)| self.get(sx, sy, c)).sum();
                    data[(y * w + x) * self.channels + c] = s / n;
                }
            }
        }
        ImageGrid {
            width: w,
            height: h,
            channels: self.channels,
            data,
        }
    }

    /// Same image with channels reordered: output channel `c` is input channel `perm[c]`.
    pub fn permute_channels(&self, perm: &[usize]) -> Result<ImageGrid> {
        if perm.len() != self.channels {
            return Err(Error::invalid("permutation length must equal channel count"));
        }
        let data = self
            .data
            .chunks_exact(self.channels)
            .flat_map(|px| perm.iter().map(move |&c| px[c]))
            .collect();
        ImageGrid::new(self.width, self.height, self.channels, data)
    }
}

/// Source pixels pooled into output pixel `(x, y)` by 2×2 average pooling.
pub(crate) fn pool_children(x: usize, y: usize, width: usize, height: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(4);
    for sy in 2 * y..(2 * y + 2).min(height) {
        for sx in 2 * x..(2 * x + 2).min(width) {
            out.push((sx, sy));
        }
    }
    out
}

/// Per-pixel depth (or disparity) with validity flags.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    width: usize,
    height: usize,
    data: Vec<f64>,
    valid: Vec<bool>,
}

impl DepthMap {
    /// Builds a map from raw values; entries that are non-finite or `<= 0` are
    /// marked invalid and stored as NaN.
    pub fn from_values(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::invalid(format!(
                "depth data length {} != {width}x{height}",
                values.len()
            )));
        }
        let valid: Vec<bool> = values.iter().map(|v| v.is_finite() && *v > 0.0).collect();
        let data = values
            .into_iter()
            .zip(&valid)
            .map(|(v, &ok)| if ok { v } else { f64::NAN })
            .collect();
        Ok(Self {
            width,
            height,
            data,
            valid,
        })
    }

    pub fn new(width: usize, height: usize, data: Vec<f64>, valid: Vec<bool>) -> Result<Self> {
        if data.len() != width * height || valid.len() != width * height {
            return Err(Error::invalid("depth data/validity length mismatch"));
        }
        if let Some(i) = (0..data.len()).find(|&i| valid[i] && !(data[i].is_finite() && data[i] > 0.0)) {
            return Err(Error::invalid(format!(
                "valid depth at index {i} is not positive and finite ({})",
                data[i]
            )));
        }
        let data = data
            .into_iter()
            .zip(&valid)
            .map(|(v, &ok)| if ok { v } else { f64::NAN })
            .collect();
        Ok(Self {
            width,
            height,
            data,
            valid,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::from_values(width, height, vec![value; width * height])
    }

    pub fn invalid(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![f64::NAN; width * height],
            valid: vec![false; width * height],
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    /// Raw values; invalid entries hold NaN.
    pub fn values(&self) -> &[f64] {
        &self.data
    }

    pub fn validity(&self) -> &[bool] {
        &self.valid
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Option<f64> {
        let i = y * self.width + x;
        self.valid[i].then(|| self.data[i])
    }

    #[inline]
    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        self.valid[y * self.width + x]
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    pub fn valid_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.data.iter().zip(&self.valid).filter(|(_, ok)| **ok).map(|(v, _)| *v)
    }

    /// Elementwise reciprocal of valid entries (depth ↔ disparity).
    pub fn reciprocal(&self) -> DepthMap {
        let data = self
            .data
            .iter()
            .zip(&self.valid)
            .map(|(v, ok)| if *ok { 1.0 / v } else { f64::NAN })
            .collect();
        DepthMap {
            width: self.width,
            height: self.height,
            data,
            valid: self.valid.clone(),
        }
    }

    /// Multiplies valid entries by `k > 0`.
    pub fn scaled(&self, k: f64) -> DepthMap {
        let data = self.data.iter().map(|v| v * k).collect();
        DepthMap {
            width: self.width,
            height: self.height,
            data,
            valid: self.valid.clone(),
        }
    }

    /// Applies `f` to valid entries; results that are not positive and finite
    /// become invalid.
    pub fn map_valid(&self, f: impl Fn(f64) -> f64) -> DepthMap {
        let values = self
            .data
            .iter()
            .zip(&self.valid)
            .map(|(v, ok)| if *ok { f(*v) } else { f64::NAN })
            .collect();
        DepthMap::from_values(self.width, self.height, values).expect("dims unchanged")
    }

    /// 2×2 average pooling over valid children.
    pub fn downsample2(&self) -> DepthMap {
        let (w, h) = (self.width.div_ceil(2), self.height.div_ceil(2));
        let mut data = vec![f64::NAN; w * h];
        let mut valid = vec![false; w * h];
        for y in 0..h {
            for x in 0..w {
                let vals: Vec<f64> = pool_children(x, y, self.width, self.height)
                    .into_iter()
                    .filter_map(|(sx, sy)| self.get(sx, sy))
                    .collect();
                if !vals.is_empty() {
                    data[y * w + x] = vals.iter().sum::<f64>() / vals.len() as f64;
                    valid[y * w + x] = true;
                }
            }
        }
        DepthMap {
            width: w,
            height: h,
            data,
            valid,
        }
    }
}

/// Per-pixel inclusion flags for a loss term.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidityMask {
    width: usize,
    height: usize,
    flags: Vec<bool>,
}

impl ValidityMask {
    pub fn new(width: usize, height: usize, flags: Vec<bool>) -> Result<Self> {
        if flags.len() != width * height {
            return Err(Error::invalid("mask length does not match dimensions"));
        }
        Ok(Self {
            width,
            height,
            flags,
        })
    }

    pub fn all(width: usize, height: usize, value: bool) -> Self {
        Self {
            width,
            height,
            flags: vec![value; width * height],
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.flags[y * self.width + x]
    }

    pub fn flags(&self) -> &[bool] {
        &self.flags
    }

    pub fn count(&self) -> usize {
        self.flags.iter().filter(|f| **f).count()
    }
}

pub(crate) fn check_dims(expected: (usize, usize), got: (usize, usize)) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}
