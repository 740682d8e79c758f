//! Image pyramids and depth upsampling, plain bilinear and image-guided.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image_geometry::{check_dims, sample_depth_at, DepthMap, ImageGrid, PixelCoord};

/// Level `s` (1-based) at `1/2^(s−1)` resolution; level 1 is the source.
#[derive(Debug, Clone, PartialEq)]
pub struct Pyramid {
    pub images: Vec<ImageGrid>,
    pub depths: Option<Vec<DepthMap>>,
}

impl Pyramid {
    pub fn levels(&self) -> usize {
        self.images.len()
    }

    pub fn level(&self, scale: usize) -> &ImageGrid {
        &self.images[scale - 1]
    }
}

fn check_pyramid_dims(width: usize, height: usize, levels: usize) -> Result<()> {
    if levels == 0 {
        return Err(Error::invalid("a pyramid needs at least one level"));
    }
    let need = 1usize << (levels - 1);
    if width < need || height < need {
        return Err(Error::invalid(format!(
            "{width}×{height} is too small for {levels} levels (needs at least {need}×{need})"
        )));
    }
    Ok(())
}

/// Chain of 2×2 box averages.
pub fn build_pyramid(img: &ImageGrid, levels: usize) -> Result<Pyramid> {
    check_pyramid_dims(img.width(), img.height(), levels)?;
    let mut images = vec![img.clone()];
    while images.len() < levels {
        let next = images.last().expect("non-empty").downsample2();
        images.push(next);
    }
    Ok(Pyramid { images, depths: None })
}

/// [`build_pyramid`] with a matching chain of depth maps.
pub fn build_pyramid_with_depth(img: &ImageGrid, depth: &DepthMap, levels: usize) -> Result<Pyramid> {
    check_dims(img.dims(), depth.dims())?;
    let mut p = build_pyramid(img, levels)?;
    let mut depths = vec![depth.clone()];
    while depths.len() < levels {
        let next = depths.last().expect("non-empty").downsample2();
        depths.push(next);
    }
    p.depths = Some(depths);
    Ok(p)
}

fn check_factor(factor: usize) -> Result<()> {
    if factor < 2 {
        return Err(Error::invalid(format!("upsampling factor must be at least 2, got {factor}")));
    }
    Ok(())
}

/// Low-resolution coordinate of a high-resolution pixel center.
#[inline]
fn low_coord(x: usize, factor: usize, extent: usize) -> f64 {
    ((x as f64 + 0.5) / factor as f64 - 0.5).clamp(0.0, (extent - 1) as f64)
}

/// Bilinear enlargement with pixel centers aligned between resolutions.
/// Output pixels whose neighborhood contains an invalid depth are invalid.
pub fn bilinear_upsample_depth(low: &DepthMap, factor: usize) -> Result<DepthMap> {
    check_factor(factor)?;
    let (w, h) = low.dims();
    let (hw, hh) = (w * factor, h * factor);
    let values: Vec<f64> = (0..hw * hh)
        .into_par_iter()
        .map(|i| {
            let p = PixelCoord::new(low_coord(i % hw, factor, w), low_coord(i / hw, factor, h));
            sample_depth_at(low, p).unwrap_or(f64::NAN)
        })
        .collect();
    DepthMap::from_values(hw, hh, values)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GuidedUpsample {
    pub depth: DepthMap,
    /// Pixels where every joint weight vanished and the bilinear value was used.
    pub fallback: Vec<bool>,
}

impl GuidedUpsample {
    pub fn fallback_count(&self) -> usize {
        self.fallback.iter().filter(|f| **f).count()
    }
}

/// Joint-bilateral upsampling. Each output depth is the normalized average of
/// nearby low-resolution depths weighted by a spatial Gaussian (in output
/// pixels) and a Gaussian on the difference between the guide intensity at
/// the output pixel and the mean guide intensity over the low-resolution
/// pixel's footprint.
pub fn guided_upsample_depth(
    low: &DepthMap,
    guide: &ImageGrid,
    factor: usize,
    range_sigma: f64,
    spatial_sigma: f64,
) -> Result<GuidedUpsample> {
    check_factor(factor)?;
    let (w, h) = low.dims();
    let (hw, hh) = (w * factor, h * factor);
    check_dims((hw, hh), guide.dims())?;
    if !(range_sigma > 0.0 && spatial_sigma > 0.0) {
        return Err(Error::invalid("guided upsampling sigmas must be positive"));
    }
    let gray = guide.channel_mean();
    let gray = gray.data();
    let footprint: Vec<f64> = (0..w * h)
        .map(|j| {
            let (jx, jy) = (j % w, j / w);
            let mut s = 0.0;
            for y in jy * factor..(jy + 1) * factor {
                for x in jx * factor..(jx + 1) * factor {
                    s += gray[y * hw + x];
                }
            }
            s / (factor * factor) as f64
        })
        .collect();
    let sigma_low = spatial_sigma / factor as f64;
    let radius = (2.0 * sigma_low).ceil() as i64;
    let bilinear = bilinear_upsample_depth(low, factor)?;

    let out: Vec<(f64, bool)> = (0..hw * hh)
        .into_par_iter()
        .map(|i| {
            let (x, y) = (i % hw, i / hw);
            let (u, v) = (low_coord(x, factor, w), low_coord(y, factor, h));
            let g = gray[i];
            let (mut num, mut den) = (0.0, 0.0);
            let (cu, cv) = (u.round() as i64, v.round() as i64);
            for jy in (cv - radius).max(0)..=(cv + radius).min(h as i64 - 1) {
                for jx in (cu - radius).max(0)..=(cu + radius).min(w as i64 - 1) {
                    let Some(d) = low.get(jx as usize, jy as usize) else { continue };
                    let (dx, dy) = (jx as f64 - u, jy as f64 - v);
                    let dr = g - footprint[jy as usize * w + jx as usize];
                    let wgt = (-(dx * dx + dy * dy) / (2.0 * sigma_low * sigma_low)
                        - dr * dr / (2.0 * range_sigma * range_sigma))
                        .exp();
                    num += wgt * d;
                    den += wgt;
                }
            }
            if den > 0.0 && (num / den).is_finite() {
                (num / den, false)
            } else {
                (bilinear.values()[i], true)
            }
        })
        .collect();
    let fallback = out.iter().map(|o| o.1).collect();
    Ok(GuidedUpsample {
        depth: DepthMap::from_values(hw, hh, out.into_iter().map(|o| o.0).collect())?,
        fallback,
    })
}
