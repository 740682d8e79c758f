//! Depth error metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image_geometry::{
    check_dims, sample_depth, transform_depth, warp_coords, DepthMap, Intrinsics, RigidPose, ValidityMask,
};
use crate::losses::depth_consistency_cost;

/// Lower clamp applied to predictions before comparison.
pub const MIN_DEPTH: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthMetrics {
    pub abs_rel: f64,
    pub sq_rel: f64,
    pub rmse: f64,
    pub rmse_log: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
    /// Pixels that entered the averages.
    pub count: usize,
}

/// Standard depth metrics over pixels where both maps are valid and the
/// ground truth is at most `cap`. Predictions are clamped to `[1e-3, cap]`.
/// A pixel counts toward `deltaK` when `max(p/g, g/p) ≤ 1.25^K`.
pub fn compute_metrics(pred: &DepthMap, gt: &DepthMap, cap: f64) -> Result<DepthMetrics> {
    check_dims(gt.dims(), pred.dims())?;
    if !(cap > MIN_DEPTH) {
        return Err(Error::invalid(format!("depth cap {cap} must exceed {MIN_DEPTH}")));
    }
    let (mut abs_rel, mut sq_rel, mut sq, mut sq_log) = (0.0, 0.0, 0.0, 0.0);
    let mut within = [0usize; 3];
    let mut count = 0usize;
    for (p, g) in pred.values().iter().zip(gt.values()) {
        if !(p.is_finite() && g.is_finite() && *g <= cap) {
            continue;
        }
        let p = p.clamp(MIN_DEPTH, cap);
        let diff = p - g;
        abs_rel += diff.abs() / g;
        sq_rel += diff * diff / g;
        sq += diff * diff;
        let l = p.ln() - g.ln();
        sq_log += l * l;
        let ratio = (p / g).max(g / p);
        for (k, w) in within.iter_mut().enumerate() {
            if ratio <= 1.25f64.powi(k as i32 + 1) {
                *w += 1;
            }
        }
        count += 1;
    }
    if count == 0 {
        return Err(Error::EmptyCost("depth metrics: no jointly valid pixels".into()));
    }
    let n = count as f64;
    Ok(DepthMetrics {
        abs_rel: abs_rel / n,
        sq_rel: sq_rel / n,
        rmse: (sq / n).sqrt(),
        rmse_log: (sq_log / n).sqrt(),
        delta1: within[0] as f64 / n,
        delta2: within[1] as f64 / n,
        delta3: within[2] as f64 / n,
        count,
    })
}

/// Median of a non-empty slice; the mean of the two middle values for even
/// lengths.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    let mid = v.len() / 2;
    let (lower, m, _) = v.select_nth_unstable_by(mid, f64::total_cmp);
    let m = *m;
    if values.len() % 2 == 1 {
        Some(m)
    } else {
        let below = lower.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Some(0.5 * (below + m))
    }
}

/// Multiplies `pred` by `median(gt) / median(pred)` over jointly valid pixels.
pub fn median_scale(pred: &DepthMap, gt: &DepthMap) -> Result<DepthMap> {
    Ok(pred.scaled(median_scale_factor(pred, gt)?))
}

pub fn median_scale_factor(pred: &DepthMap, gt: &DepthMap) -> Result<f64> {
    check_dims(gt.dims(), pred.dims())?;
    let (mut p, mut g) = (Vec::new(), Vec::new());
    for (a, b) in pred.values().iter().zip(gt.values()) {
        if a.is_finite() && b.is_finite() {
            p.push(*a);
            g.push(*b);
        }
    }
    let (mp, mg) = match (median(&p), median(&g)) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(Error::EmptyCost("median scaling: no jointly valid pixels".into())),
    };
    if mp == 0.0 || mg == 0.0 {
        return Err(Error::invalid("median scaling: zero median"));
    }
    Ok(mg / mp)
}

/// Pixels adjacent to a ground-truth depth discontinuity: both ends of every
/// horizontal or vertical neighbor pair whose depths differ by more than
/// `edge_threshold`.
pub fn boundary_mask(gt: &DepthMap, edge_threshold: f64) -> Vec<bool> {
    let (w, h) = gt.dims();
    let mut mask = vec![false; w * h];
    let mut mark = |a: (usize, usize), b: (usize, usize)| {
        if let (Some(da), Some(db)) = (gt.get(a.0, a.1), gt.get(b.0, b.1)) {
            if (da - db).abs() > edge_threshold {
                mask[a.1 * w + a.0] = true;
                mask[b.1 * w + b.0] = true;
            }
        }
    };
    for y in 0..h {
        for x in 0..w {
            if x + 1 < w {
                mark((x, y), (x + 1, y));
            }
            if y + 1 < h {
                mark((x, y), (x, y + 1));
            }
        }
    }
    mask
}

/// Depth RMSE over the pixels of [`boundary_mask`].
pub fn boundary_error(pred: &DepthMap, gt: &DepthMap, edge_threshold: f64) -> Result<f64> {
    check_dims(gt.dims(), pred.dims())?;
    let mask = boundary_mask(gt, edge_threshold);
    let mut sq = 0.0;
    let mut n = 0usize;
    for ((m, p), g) in mask.iter().zip(pred.values()).zip(gt.values()) {
        if *m && p.is_finite() {
            sq += (p - g) * (p - g);
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::EmptyCost("boundary error: no depth discontinuities".into()));
    }
    Ok((sq / n as f64).sqrt())
}

/// Mean `|D_transported − D_sampled|` between a source depth map and the
/// depth map of the frame reached by `pose`, over pixels where both routes
/// are defined.
pub fn consistency_residual(source: &DepthMap, target: &DepthMap, k: &Intrinsics, pose: &RigidPose) -> Result<f64> {
    check_dims(source.dims(), target.dims())?;
    let (w, h) = source.dims();
    let coords = warp_coords(source, k, pose);
    let mask = ValidityMask::new(w, h, coords.iter().map(Option::is_some).collect())?;
    let field = depth_consistency_cost(&transform_depth(source, k, pose), &sample_depth(target, &coords, w, h), &mask)?;
    let (sum, n) = field
        .cost
        .iter()
        .zip(&field.valid)
        .filter(|(_, v)| **v)
        .fold((0.0, 0usize), |(s, n), (c, _)| (s + c, n + 1));
    if n == 0 {
        return Err(Error::EmptyCost("consistency residual: no pixel lands in the target frame".into()));
    }
    Ok(sum / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn map(w: usize, h: usize, v: Vec<f64>) -> DepthMap {
        DepthMap::from_values(w, h, v).unwrap()
    }

    #[test]
    fn identical_maps() {
        let g = map(3, 1, vec![1.0, 2.0, 7.0]);
        let m = compute_metrics(&g, &g, 80.0).unwrap();
        assert_eq!((m.abs_rel, m.sq_rel, m.rmse, m.rmse_log), (0.0, 0.0, 0.0, 0.0));
        assert_eq!((m.delta1, m.delta2, m.delta3), (1.0, 1.0, 1.0));
    }

    #[test]
    fn doubled_prediction() {
        let g = map(3, 1, vec![1.0, 2.0, 7.0]);
        let m = compute_metrics(&g.scaled(2.0), &g, 80.0).unwrap();
        assert!((m.abs_rel - 1.0).abs() < 1e-12);
        assert_eq!((m.delta1, m.delta2, m.delta3), (0.0, 0.0, 0.0));
    }

    #[test]
    fn constant_four_vs_five() {
        let g = DepthMap::filled(2, 2, 4.0).unwrap();
        let p = DepthMap::filled(2, 2, 5.0).unwrap();
        let m = compute_metrics(&p, &g, 80.0).unwrap();
        assert!((m.abs_rel - 0.25).abs() < 1e-12);
        assert!((m.sq_rel - 0.25).abs() < 1e-12);
        assert!((m.rmse - 1.0).abs() < 1e-12);
        assert!((m.rmse_log - 1.25f64.ln()).abs() < 1e-12);
        assert_eq!(m.delta1, 1.0);
    }

    #[test]
    fn cap_filters_gt_and_clamps_pred() {
        let g = map(2, 1, vec![10.0, 100.0]);
        let p = map(2, 1, vec![200.0, 1.0]);
        let m = compute_metrics(&p, &g, 80.0).unwrap();
        assert_eq!(m.count, 1);
        assert!((m.abs_rel - 7.0).abs() < 1e-12);
        let all_far = map(1, 1, vec![100.0]);
        assert!(compute_metrics(&all_far, &all_far, 80.0).is_err());
    }

    #[test]
    fn median_scaling_recovers_gt() {
        let g = map(4, 1, vec![1.0, 3.0, 2.0, 8.0]);
        let out = median_scale(&g.scaled(0.37), &g).unwrap();
        for (a, b) in out.values().iter().zip(g.values()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
    }

    #[test]
    fn boundary_needs_discontinuity() {
        let smooth = map(4, 1, vec![1.0, 1.1, 1.2, 1.3]);
        assert!(boundary_error(&smooth, &smooth, 0.5).is_err());
        let step = map(4, 1, vec![1.0, 1.0, 5.0, 5.0]);
        assert_eq!(boundary_error(&step, &step, 0.5).unwrap(), 0.0);
    }

    #[test]
    fn boundary_error_of_blended_edge() {
        let gt = map(4, 2, vec![1.0, 1.0, 5.0, 5.0, 1.0, 1.0, 5.0, 5.0]);
        // Blended values 2 and 4 on the two pixels either side of the step.
        let pred = map(4, 2, vec![1.0, 2.0, 4.0, 5.0, 1.0, 2.0, 4.0, 5.0]);
        assert_eq!(boundary_error(&pred, &gt, 0.5).unwrap(), 1.0);
        assert_eq!(
            boundary_mask(&gt, 0.5),
            vec![false, true, true, false, false, true, true, false]
        );
    }

    #[test]
    fn residual_of_consistent_plane() {
        let k = Intrinsics::new(20.0, 20.0, 8.0, 6.0).unwrap();
        let d = DepthMap::filled(16, 12, 5.0).unwrap();
        let pose = RigidPose::from_translation(nalgebra::Vector3::new(0.0, 0.0, -1.0));
        let moved = DepthMap::filled(16, 12, 4.0).unwrap();
        assert!(consistency_residual(&d, &moved, &k, &pose).unwrap() < 1e-12);
        let r = consistency_residual(&d, &d, &k, &pose).unwrap();
        assert!((r - 1.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn median_scaled_median_matches(v in prop::collection::vec(0.1..50.0f64, 1..60), k in 0.01..100.0f64) {
            let n = v.len();
            let g = map(n, 1, v.iter().map(|x| x * 1.3 + 0.2).collect());
            let p = map(n, 1, v.clone());
            let out = median_scale(&p, &g).unwrap();
            let m_out = median(out.values()).unwrap();
            let m_gt = median(g.values()).unwrap();
            prop_assert!((m_out - m_gt).abs() < 1e-10 * m_gt.max(1.0));
            let again = median_scale(&p.scaled(k), &g).unwrap();
            for (a, b) in again.values().iter().zip(out.values()) {
                prop_assert!((a - b).abs() < 1e-10 * b.abs().max(1.0));
            }
        }

        #[test]
        fn metrics_permutation_and_scale_invariant(
            v in prop::collection::vec((0.5..20.0f64, 0.5..20.0f64), 2..40),
            k in 0.1..3.0f64,
            rot in 0usize..40,
        ) {
            let n = v.len();
            let p = map(n, 1, v.iter().map(|x| x.0).collect());
            let g = map(n, 1, v.iter().map(|x| x.1).collect());
            let m = compute_metrics(&p, &g, 1e6).unwrap();
            let r = rot % n;
            let pr = map(n, 1, p.values().iter().cycle().skip(r).take(n).copied().collect());
            let gr = map(n, 1, g.values().iter().cycle().skip(r).take(n).copied().collect());
            let mr = compute_metrics(&pr, &gr, 1e6).unwrap();
            prop_assert!((m.abs_rel - mr.abs_rel).abs() < 1e-12);
            prop_assert!((m.rmse - mr.rmse).abs() < 1e-9);
            prop_assert_eq!(m.delta1, mr.delta1);
            let ms = compute_metrics(&p.scaled(k), &g.scaled(k), 1e6).unwrap();
            prop_assert!((m.abs_rel - ms.abs_rel).abs() < 1e-12);
            prop_assert_eq!(m.delta2, ms.delta2);
            prop_assert!(m.delta1 <= m.delta2 && m.delta2 <= m.delta3);
        }
    }
}
