use crate::error::Result;
use crate::image_geometry::{check_dims, ImageGrid, ValidityMask};

pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

/// Per-pixel, per-channel SSIM values; NaN where the center pixel is masked.
#[derive(Debug, Clone, PartialEq)]
pub struct SsimMap {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub values: Vec<f64>,
}

impl SsimMap {
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.values[(y * self.width + x) * self.channels + c]
    }
}

/// Statistics of one SSIM window, kept for differentiation.
#[derive(Debug, Clone, Copy)]
pub(crate) struct SsimWindow {
    pub value: f64,
    n: f64,
    mu_x: f64,
    mu_y: f64,
    /// ∂S/∂μx, ∂S/∂σx², ∂S/∂σxy
    d_mu_x: f64,
    d_var_x: f64,
    d_cov: f64,
}

impl SsimWindow {
    /// SSIM of paired samples `(x_i, y_i)` with box weights.
    #[inline]
    pub fn eval(xs: &[f64], ys: &[f64]) -> Self {
        let n = xs.len() as f64;
        let mu_x = xs.iter().sum::<f64>() / n;
        let mu_y = ys.iter().sum::<f64>() / n;
        let (mut var_x, mut var_y, mut cov) = (0.0, 0.0, 0.0);
        for (x, y) in xs.iter().zip(ys) {
            let (dx, dy) = (x - mu_x, y - mu_y);
            var_x += dx * dx;
            var_y += dy * dy;
            cov += dx * dy;
        }
        var_x /= n;
        var_y /= n;
        cov /= n;
        let a1 = 2.0 * mu_x * mu_y + SSIM_C1;
        let a2 = 2.0 * cov + SSIM_C2;
        let b1 = mu_x * mu_x + mu_y * mu_y + SSIM_C1;
        let b2 = var_x + var_y + SSIM_C2;
        let value = (a1 * a2) / (b1 * b2);
        Self {
            value,
            n,
            mu_x,
            mu_y,
            d_mu_x: 2.0 * mu_y * a2 / (b1 * b2) - value * 2.0 * mu_x / b1,
            d_var_x: -value / b2,
            d_cov: 2.0 * a1 / (b1 * b2),
        }
    }

    /// ∂S/∂x_q for the window sample `(x_q, y_q)`.
    #[inline]
    pub fn grad_x(&self, x_q: f64, y_q: f64) -> f64 {
        (self.d_mu_x + 2.0 * self.d_var_x * (x_q - self.mu_x) + self.d_cov * (y_q - self.mu_y)) / self.n
    }
}

/// In-bounds 3×3 neighbors of `(x, y)` whose mask flag is set, in row-major order.
#[inline]
pub(crate) fn window_indices(
    x: usize,
    y: usize,
    width: usize,
    height: usize,
    mask: &[bool],
    out: &mut Vec<usize>,
) {
    out.clear();
    for ny in y.saturating_sub(1)..=(y + 1).min(height - 1) {
        for nx in x.saturating_sub(1)..=(x + 1).min(width - 1) {
            let i = ny * width + nx;
            if mask[i] {
                out.push(i);
            }
        }
    }
}

/// SSIM over 3×3 box windows with `c1 = 0.01²`, `c2 = 0.03²`.
pub fn ssim(x: &ImageGrid, y: &ImageGrid) -> Result<SsimMap> {
    let (w, h) = x.dims();
    ssim_masked(x, y, &ValidityMask::all(w, h, true))
}

/// SSIM where each window only pools pixels whose mask flag is set.
pub fn ssim_masked(x: &ImageGrid, y: &ImageGrid, mask: &ValidityMask) -> Result<SsimMap> {
    check_dims(x.dims(), y.dims())?;
    check_dims(x.dims(), mask.dims())?;
    if x.channels() != y.channels() {
        return Err(crate::Error::invalid("channel count mismatch"));
    }
    let (w, h, ch) = (x.width(), x.height(), x.channels());
    let mut values = vec![f64::NAN; w * h * ch];
    let mut idx = Vec::with_capacity(9);
    let (mut xs, mut ys) = (Vec::with_capacity(9), Vec::with_capacity(9));
    for py in 0..h {
        for px in 0..w {
            if !mask.get(px, py) {
                continue;
            }
            window_indices(px, py, w, h, mask.flags(), &mut idx);
            for c in 0..ch {
                xs.clear();
                ys.clear();
                for &i in &idx {
                    xs.push(x.data()[i * ch + c]);
                    ys.push(y.data()[i * ch + c]);
                }
                values[(py * w + px) * ch + c] = SsimWindow::eval(&xs, &ys).value;
            }
        }
    }
    Ok(SsimMap {
        width: w,
        height: h,
        channels: ch,
        values,
    })
}
