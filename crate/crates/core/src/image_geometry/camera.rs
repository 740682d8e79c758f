use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::PixelCoord;
use crate::error::{Error, Result};

/// Pinhole intrinsics in pixels. Integer pixel coordinates address pixel centers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        if !(fx.is_finite() && fx > 0.0 && fy.is_finite() && fy > 0.0) {
            return Err(Error::invalid(format!(
                "focal lengths must be positive and finite (fx={fx}, fy={fy})"
            )));
        }
        if !(cx.is_finite() && cy.is_finite()) {
            return Err(Error::invalid("principal point must be finite"));
        }
        Ok(Self { fx, fy, cx, cy })
    }

    /// Normalized ray `K⁻¹ p` with unit z.
    #[inline]
    pub fn ray(&self, p: PixelCoord) -> Vector3<f64> {
        Vector3::new((p.u - self.cx) / self.fx, (p.v - self.cy) / self.fy, 1.0)
    }

    #[inline]
    pub fn project(&self, x: &Vector3<f64>) -> PixelCoord {
        PixelCoord::new(self.fx * x.x / x.z + self.cx, self.fy * x.y / x.z + self.cy)
    }

    /// Intrinsics of the image obtained after `levels` rounds of 2×2 average
    /// pooling. A pooled pixel `i` covers source pixels `2i` and `2i + 1`, so
    /// its center sits at source coordinate `2i + 0.5`.
    pub fn downscaled(&self, levels: usize) -> Self {
        let mut k = *self;
        for _ in 0..levels {
            k = Self {
                fx: k.fx / 2.0,
                fy: k.fy / 2.0,
                cx: (k.cx - 0.5) / 2.0,
                cy: (k.cy - 0.5) / 2.0,
            };
        }
        k
    }
}

/// Lifts pixel `p` at the given depth into a camera-frame 3D point.
pub fn backproject(p: PixelCoord, depth: f64, k: &Intrinsics) -> Result<Vector3<f64>> {
    if !(depth.is_finite() && depth > 0.0) {
        return Err(Error::invalid(format!("depth must be positive and finite, got {depth}")));
    }
    Ok(k.ray(p) * depth)
}

/// Projects a camera-frame point onto the image plane.
pub fn project_pinhole(x: &Vector3<f64>, k: &Intrinsics) -> PixelCoord {
    k.project(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backproject_principal_point_lies_on_axis() {
        let k = Intrinsics::new(123.0, 77.0, 31.5, 12.25).unwrap();
        let x = backproject(PixelCoord::new(k.cx, k.cy), 5.0, &k).unwrap();
        assert_eq!(x, Vector3::new(0.0, 0.0, 5.0));
    }

    #[test]
    fn backproject_unit_focal() {
        let k = Intrinsics::new(1.0, 1.0, 0.0, 0.0).unwrap();
        let x = backproject(PixelCoord::new(2.0, 3.0), 1.0, &k).unwrap();
        assert_eq!(x, Vector3::new(2.0, 3.0, 1.0));
    }

    #[test]
    fn backproject_hand_evaluated() {
        let k = Intrinsics::new(2.0, 4.0, 1.0, 1.0).unwrap();
        let x = backproject(PixelCoord::new(3.0, 5.0), 2.0, &k).unwrap();
        assert_eq!(x, Vector3::new(2.0, 2.0, 2.0));
    }

    #[test]
    fn backproject_rejects_bad_depth() {
        let k = Intrinsics::new(1.0, 1.0, 0.0, 0.0).unwrap();
        for d in [0.0, -1.0, f64::NAN, f64::INFINITY] {
            assert!(matches!(
                backproject(PixelCoord::new(0.0, 0.0), d, &k),
                Err(Error::InvalidInput(_))
            ));
        }
    }

    #[test]
    fn backproject_then_project_roundtrips() {
        let k = Intrinsics::new(60.0, 55.0, 31.0, 24.0).unwrap();
        for (u, v, d) in [(0.0, 0.0, 1.0), (63.0, 47.0, 9.5), (12.3, 40.7, 0.25)] {
            let p = PixelCoord::new(u, v);
            let q = project_pinhole(&backproject(p, d, &k).unwrap(), &k);
            assert!((q.u - u).abs() < 1e-10 && (q.v - v).abs() < 1e-10);
        }
    }

    #[test]
    fn intrinsics_validation() {
        assert!(Intrinsics::new(0.0, 1.0, 0.0, 0.0).is_err());
        assert!(Intrinsics::new(1.0, -1.0, 0.0, 0.0).is_err());
        assert!(Intrinsics::new(1.0, 1.0, f64::NAN, 0.0).is_err());
    }

    #[test]
    fn downscaled_maps_pixel_centers() {
        // Pooled pixel 0 is centered on source coordinate 0.5.
        let k = Intrinsics::new(8.0, 8.0, 3.5, 3.5).unwrap();
        let k1 = k.downscaled(1);
        let ray_src = k.ray(PixelCoord::new(0.5, 0.5));
        let ray_dst = k1.ray(PixelCoord::new(0.0, 0.0));
        assert!((ray_src - ray_dst).norm() < 1e-15);
        assert_eq!(k.downscaled(0), k);
    }
}
