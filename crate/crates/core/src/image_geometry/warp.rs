use nalgebra::Vector3;

use super::grid::check_dims;
use super::sampling::bilinear_sample_into;
use super::{DepthMap, ImageGrid, Intrinsics, PixelCoord, RigidPose, ValidityMask};
use crate::error::{Error, Result};
use crate::Z_MIN;

/// Maps pixel `p` of the source frame, seen at `depth`, into the target
/// frame reached by `pose`. Returns `Ok(None)` when the transformed point is
/// at or behind `Z_MIN`.
///
/// The projection is evaluated as a displacement from `p` on the scaled
/// point `R·K⁻¹p + t/depth`, which keeps the identity pose an exact identity map.
pub fn project_warp(
    p: PixelCoord,
    depth: f64,
    k: &Intrinsics,
    pose: &RigidPose,
) -> Result<Option<PixelCoord>> {
    if !(depth.is_finite() && depth > 0.0) {
        return Err(Error::invalid(format!("depth must be positive and finite, got {depth}")));
    }
    let r = pose.rotation_matrix();
    Ok(warp_scaled(p, &k.ray(p), 1.0 / depth, &r, &pose.translation, k))
}

/// Core of [`project_warp`] on a precomputed rotation, ray and disparity.
#[inline]
pub(crate) fn warp_scaled(
    p: PixelCoord,
    ray: &Vector3<f64>,
    disparity: f64,
    rot: &nalgebra::Matrix3<f64>,
    trans: &Vector3<f64>,
    k: &Intrinsics,
) -> Option<PixelCoord> {
    let q = rot * ray + trans * disparity;
    if q.z <= Z_MIN * disparity {
        return None;
    }
    Some(PixelCoord::new(
        p.u + k.fx * (q.x / q.z - ray.x),
        p.v + k.fy * (q.y / q.z - ray.y),
    ))
}

/// Target-frame coordinates of every source pixel; `None` where the depth
/// is invalid or the point lands behind the camera.
pub fn warp_coords(depth: &DepthMap, k: &Intrinsics, pose: &RigidPose) -> Vec<Option<PixelCoord>> {
    let r = pose.rotation_matrix();
    let (w, h) = depth.dims();
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let p = PixelCoord::new(x as f64, y as f64);
            out.push(
                depth
                    .get(x, y)
                    .and_then(|z| warp_scaled(p, &k.ray(p), 1.0 / z, &r, &pose.translation, k)),
            );
        }
    }
    out
}

/// Reconstructs the source frame by sampling `target` at the warped
/// coordinate of every source pixel. The mask is false wherever the warp is
/// invalid or a bilinear neighbor leaves the target image; masked pixels hold 0.
pub fn synthesize_view(
    target: &ImageGrid,
    depth: &DepthMap,
    k: &Intrinsics,
    pose: &RigidPose,
) -> Result<(ImageGrid, ValidityMask)> {
    check_dims(target.dims(), depth.dims())?;
    let (w, h) = target.dims();
    let ch = target.channels();
    let coords = warp_coords(depth, k, pose);
    let mut data = vec![0.0; w * h * ch];
    let mut flags = vec![false; w * h];
    for (i, c) in coords.iter().enumerate() {
        if let Some(p) = c {
            flags[i] = bilinear_sample_into(target, *p, &mut data[i * ch..(i + 1) * ch]);
        }
    }
    Ok((
        ImageGrid::new(w, h, ch, data)?,
        ValidityMask::new(w, h, flags)?,
    ))
}

/// Depth of every source pixel expressed in the frame reached by `pose`
/// (the z-coordinate of the transformed point).
pub fn transform_depth(depth: &DepthMap, k: &Intrinsics, pose: &RigidPose) -> DepthMap {
    let r = pose.rotation_matrix();
    let (w, h) = depth.dims();
    let mut values = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let z = depth.get(x, y).and_then(|d| {
                let p = PixelCoord::new(x as f64, y as f64);
                let pt = r * (k.ray(p) * d) + pose.translation;
                (pt.z > Z_MIN).then_some(pt.z)
            });
            values.push(z.unwrap_or(f64::NAN));
        }
    }
    DepthMap::from_values(w, h, values).expect("dims unchanged")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn unit_k() -> Intrinsics {
        Intrinsics::new(1.0, 1.0, 0.0, 0.0).unwrap()
    }

    #[test]
    fn identity_warp_is_exact() {
        let k = Intrinsics::new(57.3, 61.1, 31.7, 22.9).unwrap();
        for (u, v, d) in [(0.0, 0.0, 1.0), (13.0, 7.0, 3.3), (63.0, 47.0, 0.01)] {
            let p = PixelCoord::new(u, v);
            assert_eq!(project_warp(p, d, &k, &RigidPose::identity()).unwrap(), Some(p));
        }
    }

    #[test]
    fn lateral_translation_shifts_by_focal_over_depth() {
        let pose = RigidPose::from_translation(Vector3::new(1.0, 0.0, 0.0));
        let q = project_warp(PixelCoord::new(0.0, 0.0), 1.0, &unit_k(), &pose).unwrap().unwrap();
        assert!((q.u - 1.0).abs() < 1e-15 && q.v.abs() < 1e-15);
    }

    #[test]
    fn behind_camera_is_invalid() {
        let pose = RigidPose::from_translation(Vector3::new(0.0, 0.0, -2.0));
        assert_eq!(project_warp(PixelCoord::new(0.0, 0.0), 1.0, &unit_k(), &pose).unwrap(), None);
    }

    #[test]
    fn warp_matches_explicit_projection() {
        let k = Intrinsics::new(40.0, 42.0, 15.5, 11.0).unwrap();
        let pose = RigidPose::new(Vector3::new(0.05, -0.02, 0.03), Vector3::new(0.2, -0.1, 0.3));
        let p = PixelCoord::new(7.25, 19.5);
        let x = super::super::backproject(p, 4.0, &k).unwrap();
        let expect = k.project(&pose.transform_point(&x));
        let got = project_warp(p, 4.0, &k, &pose).unwrap().unwrap();
        assert!((got.u - expect.u).abs() < 1e-10 && (got.v - expect.v).abs() < 1e-10);
    }

    #[test]
    fn synthesize_identity_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let img = ImageGrid::from_fn(9, 7, 3, |_, _, _| rng.gen()).unwrap();
        let depth = DepthMap::filled(9, 7, 2.5).unwrap();
        let k = Intrinsics::new(10.0, 10.0, 4.0, 3.0).unwrap();
        let (synth, mask) = synthesize_view(&img, &depth, &k, &RigidPose::identity()).unwrap();
        assert_eq!(synth, img);
        assert_eq!(mask.count(), 63);
    }

    #[test]
    fn synthesize_one_pixel_shift() {
        // Brute-force oracle: Î(x, y) = I(x + 1, y), last column unobservable.
        let (w, h) = (8, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let img = ImageGrid::from_fn(w, h, 1, |_, _, _| rng.gen()).unwrap();
        let (z, fx) = (3.0, 6.0);
        let k = Intrinsics::new(fx, fx, 3.5, 3.5).unwrap();
        let depth = DepthMap::filled(w, h, z).unwrap();
        let pose = RigidPose::from_translation(Vector3::new(z / fx, 0.0, 0.0));
        let (synth, mask) = synthesize_view(&img, &depth, &k, &pose).unwrap();
        for y in 0..h {
            for x in 0..w {
                if x + 1 < w {
                    assert!(mask.get(x, y));
                    assert!((synth.get(x, y, 0) - img.get(x + 1, y, 0)).abs() < 1e-12);
                } else {
                    assert!(!mask.get(x, y));
                    assert_eq!(synth.get(x, y, 0), 0.0);
                }
            }
        }
    }

    #[test]
    fn synthesize_all_invalid_depth() {
        let img = ImageGrid::filled(4, 4, 1, 0.5).unwrap();
        let (_, mask) =
            synthesize_view(&img, &DepthMap::invalid(4, 4), &unit_k(), &RigidPose::identity()).unwrap();
        assert_eq!(mask.count(), 0);
    }

    #[test]
    fn synthesize_dimension_mismatch() {
        let img = ImageGrid::filled(4, 4, 1, 0.5).unwrap();
        let depth = DepthMap::filled(4, 3, 1.0).unwrap();
        assert!(matches!(
            synthesize_view(&img, &depth, &unit_k(), &RigidPose::identity()),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn transform_depth_cases() {
        let k = Intrinsics::new(5.0, 5.0, 2.0, 2.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let depth = DepthMap::from_values(5, 5, (0..25).map(|_| rng.gen_range(1.0..10.0)).collect()).unwrap();
        assert_eq!(transform_depth(&depth, &k, &RigidPose::identity()), depth);

        let shifted = transform_depth(&depth, &k, &RigidPose::from_translation(Vector3::new(0.0, 0.0, 0.75)));
        for (a, b) in shifted.values().iter().zip(depth.values()) {
            assert_eq!(*a, b + 0.75);
        }

        let flip = RigidPose::from_rotation(Vector3::new(0.0, PI, 0.0));
        let one = DepthMap::filled(5, 5, 1.0).unwrap();
        let k0 = Intrinsics::new(5.0, 5.0, 2.0, 2.0).unwrap();
        let t = transform_depth(&one, &k0, &flip);
        assert!(!t.is_valid(2, 2));
    }

    proptest! {
        #[test]
        fn mask_monotone_under_shrinking_bounds(tx in -2.0..2.0f64, ty in -2.0..2.0f64, z in 1.0..5.0f64) {
            // Cropping the target to its top-left sub-window never validates a pixel
            // the full-size target rejected.
            let k = Intrinsics::new(8.0, 8.0, 5.5, 5.5).unwrap();
            let pose = RigidPose::from_translation(Vector3::new(tx, ty, 0.0));
            let depth = DepthMap::filled(12, 12, z).unwrap();
            let big = ImageGrid::filled(12, 12, 1, 0.5).unwrap();
            let small = ImageGrid::filled(9, 9, 1, 0.5).unwrap();
            let (_, m_big) = synthesize_view(&big, &depth, &k, &pose).unwrap();
            let coords = warp_coords(&depth, &k, &pose);
            for (i, c) in coords.iter().enumerate() {
                let in_small = c.map(|p| bilinear_sample_into(&small, p, &mut [0.0])).unwrap_or(false);
                prop_assert!(!in_small || m_big.flags()[i]);
            }
        }

        #[test]
        fn transform_depth_z_shift(delta in -0.5..3.0f64) {
            let k = Intrinsics::new(5.0, 5.0, 2.0, 2.0).unwrap();
            let depth = DepthMap::filled(4, 4, 2.0).unwrap();
            let t = transform_depth(&depth, &k, &RigidPose::from_translation(Vector3::new(0.0, 0.0, delta)));
            for v in t.valid_values() {
                prop_assert_eq!(v, 2.0 + delta);
            }
        }
    }
}
