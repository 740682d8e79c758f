use super::{DepthMap, ImageGrid, PixelCoord};

/// The four-neighbor cell enclosing a continuous coordinate.
///
/// The cell's top-left corner is `(ceil(u) − 1, ceil(v) − 1)` clamped to the
/// raster, so an integer coordinate sits on the far edge of its cell and the
/// coordinate derivatives there are the one-sided limits from below.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BilinearCell {
    pub x0: usize,
    pub y0: usize,
    /// Fractional offsets in `[0, 1]` from `(x0, y0)`.
    pub fx: f64,
    pub fy: f64,
    /// Step to the right/bottom neighbor; 0 for single-pixel extents.
    dx: usize,
    dy: usize,
}

impl BilinearCell {
    /// Returns `None` unless `p` lies in `[0, W−1] × [0, H−1]`, i.e. all four
    /// neighbors are inside the raster.
    #[inline]
    pub fn locate(p: PixelCoord, width: usize, height: usize) -> Option<Self> {
        let (x0, fx, dx) = axis(p.u, width)?;
        let (y0, fy, dy) = axis(p.v, height)?;
        Some(Self {
            x0,
            y0,
            fx,
            fy,
            dx,
            dy,
        })
    }

    /// Corner pixel indices in order top-left, top-right, bottom-left, bottom-right.
    #[inline]
    pub fn corners(&self) -> [(usize, usize); 4] {
        let (x1, y1) = (self.x0 + self.dx, self.y0 + self.dy);
        [(self.x0, self.y0), (x1, self.y0), (self.x0, y1), (x1, y1)]
    }

    /// Interpolation weights matching [`corners`](Self::corners).
    #[inline]
    pub fn weights(&self) -> [f64; 4] {
        let (fx, fy) = (self.fx, self.fy);
        [(1.0 - fx) * (1.0 - fy), fx * (1.0 - fy), (1.0 - fx) * fy, fx * fy]
    }

    /// Interpolated value and its derivatives `(∂/∂u, ∂/∂v)` from corner values.
    #[inline]
    pub fn interpolate(&self, c: [f64; 4]) -> (f64, f64, f64) {
        let (fx, fy) = (self.fx, self.fy);
        let top = (1.0 - fx) * c[0] + fx * c[1];
        let bottom = (1.0 - fx) * c[2] + fx * c[3];
        let value = (1.0 - fy) * top + fy * bottom;
        let du = if self.dx == 0 {
            0.0
        } else {
            (1.0 - fy) * (c[1] - c[0]) + fy * (c[3] - c[2])
        };
        let dv = if self.dy == 0 { 0.0 } else { bottom - top };
        (value, du, dv)
    }
}

#[inline]
fn axis(coord: f64, extent: usize) -> Option<(usize, f64, usize)> {
    let max = (extent - 1) as f64;
    if !(coord >= 0.0 && coord <= max) {
        return None;
    }
    if extent == 1 {
        return Some((0, 0.0, 0));
    }
    let i0 = ((coord.ceil() as usize).max(1) - 1).min(extent - 2);
    Some((i0, coord - i0 as f64, 1))
}

/// Bilinear lookup of every channel at `p`. Returns zeros and `false` when
/// any of the four neighbors falls outside the image.
pub fn bilinear_sample(img: &ImageGrid, p: PixelCoord) -> (Vec<f64>, bool) {
    let mut out = vec![0.0; img.channels()];
    let ok = bilinear_sample_into(img, p, &mut out);
    (out, ok)
}

/// Allocation-free form of [`bilinear_sample`]; `out` must hold one slot per channel.
pub fn bilinear_sample_into(img: &ImageGrid, p: PixelCoord, out: &mut [f64]) -> bool {
    match BilinearCell::locate(p, img.width(), img.height()) {
        Some(cell) => {
            let [a, b, c, d] = cell.corners();
            for (ch, o) in out.iter_mut().enumerate() {
                let vals = [
                    img.get(a.0, a.1, ch),
                    img.get(b.0, b.1, ch),
                    img.get(c.0, c.1, ch),
                    img.get(d.0, d.1, ch),
                ];
                *o = cell.interpolate(vals).0;
            }
            true
        }
        None => {
            out.fill(0.0);
            false
        }
    }
}

/// Bilinear interpolation of depth values at each coordinate. An output
/// entry is invalid when its coordinate is missing, out of bounds, or any of
/// its four neighbors is invalid.
pub fn sample_depth(depth: &DepthMap, coords: &[Option<PixelCoord>], width: usize, height: usize) -> DepthMap {
    assert_eq!(coords.len(), width * height, "coordinate grid size mismatch");
    let values = coords
        .iter()
        .map(|c| {
            c.and_then(|p| sample_depth_at(depth, p)).unwrap_or(f64::NAN)
        })
        .collect();
    DepthMap::from_values(width, height, values).expect("length checked")
}

/// Interpolated depth at a single coordinate.
pub fn sample_depth_at(depth: &DepthMap, p: PixelCoord) -> Option<f64> {
    let cell = BilinearCell::locate(p, depth.width(), depth.height())?;
    let mut vals = [0.0; 4];
    for (v, (x, y)) in vals.iter_mut().zip(cell.corners()) {
        *v = depth.get(x, y)?;
    }
    Some(cell.interpolate(vals).0)
}
