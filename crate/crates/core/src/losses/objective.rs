use serde::{Deserialize, Serialize};

use super::clip::{clip_costs, pooled_percentile};
use super::terms::{depth_consistency_cost, photometric_cost, smoothness_cost, CostField, LossWeights};
use crate::error::{Error, Result};
use crate::image_geometry::{
    sample_depth, synthesize_view, transform_depth, warp_coords, DepthMap, ImageGrid, Intrinsics,
    RigidPose, ValidityMask,
};
use crate::optimizer::normalize_disparity;
use crate::snippet::{consistency_pairs, reconstruction_pairs, Direction, ScaleSet, Snippet};

/// One clipped cost term at one scale and direction.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TermReport {
    /// Sum of clipped per-pixel costs.
    pub value: f64,
    /// Clip threshold used; `None` when the term had no valid pixels.
    pub threshold: Option<f64>,
    pub valid_pixels: usize,
}

impl TermReport {
    pub fn is_empty(&self) -> bool {
        self.valid_pixels == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleReport {
    /// 1-based pyramid level.
    pub scale: usize,
    pub weight: f64,
    pub enabled: bool,
    pub reconstruction_fwd: TermReport,
    pub reconstruction_bwd: TermReport,
    pub consistency_fwd: TermReport,
    pub consistency_bwd: TermReport,
    /// Unweighted smoothness over all frames.
    pub smoothness: f64,
    /// `re_f + re_b + dc_weight·(dc_f + dc_b) + smooth_weight·smoothness`
    pub total: f64,
}

impl ScaleReport {
    pub(crate) fn disabled(scale: usize) -> Self {
        Self {
            scale,
            weight: crate::snippet::ScaleSet::weight(scale),
            enabled: false,
            reconstruction_fwd: TermReport::default(),
            reconstruction_bwd: TermReport::default(),
            consistency_fwd: TermReport::default(),
            consistency_bwd: TermReport::default(),
            smoothness: 0.0,
            total: 0.0,
        }
    }

    pub(crate) fn combine(&mut self, weights: &LossWeights) {
        self.total = self.reconstruction_fwd.value
            + self.reconstruction_bwd.value
            + weights.dc_weight * (self.consistency_fwd.value + self.consistency_bwd.value)
            + weights.smooth_weight * self.smoothness;
    }

    pub fn reconstruction(&self, dir: Direction) -> &TermReport {
        match dir {
            Direction::Forward => &self.reconstruction_fwd,
            Direction::Backward => &self.reconstruction_bwd,
        }
    }

    pub fn consistency(&self, dir: Direction) -> &TermReport {
        match dir {
            Direction::Forward => &self.consistency_fwd,
            Direction::Backward => &self.consistency_bwd,
        }
    }

    /// Terms that had no valid pixels, by name.
    pub fn empty_terms(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        if self.enabled {
            for (name, t) in [
                ("reconstruction_fwd", &self.reconstruction_fwd),
                ("reconstruction_bwd", &self.reconstruction_bwd),
                ("consistency_fwd", &self.consistency_fwd),
                ("consistency_bwd", &self.consistency_bwd),
            ] {
                if t.is_empty() {
                    out.push(name);
                }
            }
        }
        out
    }
}

/// Per-scale, per-term breakdown of the objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub weights: LossWeights,
    pub scales: Vec<ScaleReport>,
    /// `Σ_s weight_s · total_s` over enabled scales.
    pub total: f64,
}

impl LossReport {
    pub(crate) fn finish(weights: LossWeights, mut scales: Vec<ScaleReport>) -> Self {
        let mut total = 0.0;
        for s in &mut scales {
            if s.enabled {
                s.combine(&weights);
                total += s.weight * s.total;
            }
        }
        Self {
            weights,
            scales,
            total,
        }
    }

    /// Weighted smoothness summed over enabled scales.
    pub fn weighted_smoothness(&self) -> f64 {
        self.scales
            .iter()
            .filter(|s| s.enabled)
            .map(|s| s.weight * s.smoothness)
            .sum()
    }

    pub fn has_empty_terms(&self) -> bool {
        self.scales.iter().any(|s| !s.empty_terms().is_empty())
    }
}

/// Frames, channel means and intrinsics at one pyramid level.
#[derive(Debug, Clone)]
pub(crate) struct LevelFrames {
    pub images: Vec<ImageGrid>,
    pub intrinsics: Intrinsics,
}

pub(crate) fn level_frames(snippet: &Snippet, levels: usize) -> Vec<LevelFrames> {
    let mut out: Vec<LevelFrames> = Vec::with_capacity(levels);
    for l in 0..levels {
        let images = match out.last() {
            None => snippet.frames().to_vec(),
            Some(prev) => prev.images.iter().map(ImageGrid::downsample2).collect(),
        };
        out.push(LevelFrames {
            images,
            intrinsics: snippet.intrinsics().downscaled(l),
        });
    }
    out
}

fn clipped_term(fields: &[CostField], q: f64) -> TermReport {
    let valid_pixels = fields.iter().map(CostField::valid_count).sum();
    match pooled_percentile(fields, q) {
        Ok(t) => TermReport {
            value: fields.iter().map(|f| clip_costs(f, t).sum()).sum(),
            threshold: Some(t),
            valid_pixels,
        },
        Err(_) => TermReport::default(),
    }
}

/// Evaluates the full multi-scale objective by composing the per-term
/// operations: view synthesis and photometric cost over consecutive pairs,
/// depth consistency over every ordered pair, both traversal directions,
/// per-term percentile clipping, and edge-aware smoothness on
/// mean-normalized disparity.
///
/// `depths` are full-resolution depth maps; coarser levels use the 2×2
/// average of the disparity.
pub fn snippet_objective(
    snippet: &Snippet,
    poses: &[RigidPose],
    depths: &[DepthMap],
    weights: &LossWeights,
    scales: &ScaleSet,
) -> Result<LossReport> {
    weights.validate()?;
    let n = snippet.len();
    if n < 2 {
        return Err(Error::invalid("snippet needs at least two frames"));
    }
    if poses.len() != n - 1 || depths.len() != n {
        return Err(Error::invalid(format!(
            "expected {} poses and {n} depth maps, got {} and {}",
            n - 1,
            poses.len(),
            depths.len()
        )));
    }
    for d in depths {
        crate::image_geometry::check_dims((snippet.width(), snippet.height()), d.dims())?;
    }
    scales.validate(snippet.width(), snippet.height())?;

    let levels = level_frames(snippet, scales.levels());
    let mut disparity: Vec<DepthMap> = depths.iter().map(DepthMap::reciprocal).collect();
    let mut reports = Vec::with_capacity(scales.levels());
    for (l, lv) in levels.iter().enumerate() {
        let scale = l + 1;
        if l > 0 {
            disparity = disparity.iter().map(DepthMap::downsample2).collect();
        }
        if !scales.is_enabled(scale) {
            reports.push(ScaleReport::disabled(scale));
            continue;
        }
        let depth: Vec<DepthMap> = disparity.iter().map(DepthMap::reciprocal).collect();
        let k = &lv.intrinsics;
        let mut rep = ScaleReport::disabled(scale);
        rep.enabled = true;

        for dir in Direction::BOTH {
            let mut re_fields = Vec::new();
            for pair in reconstruction_pairs(n, dir) {
                let pose = pair.pose(poses)?;
                let (synth, mask) =
                    synthesize_view(&lv.images[pair.target], &depth[pair.source], k, &pose)?;
                re_fields.push(photometric_cost(
                    &lv.images[pair.source],
                    &synth,
                    &mask,
                    weights.ssim_mix,
                )?);
            }
            let mut dc_fields = Vec::new();
            for pair in consistency_pairs(n, dir) {
                let pose = pair.pose(poses)?;
                let src = &depth[pair.source];
                let transported = transform_depth(src, k, &pose);
                let coords = warp_coords(src, k, &pose);
                let sampled = sample_depth(&depth[pair.target], &coords, src.width(), src.height());
                let mask = ValidityMask::new(
                    src.width(),
                    src.height(),
                    transported
                        .validity()
                        .iter()
                        .zip(sampled.validity())
                        .map(|(a, b)| *a && *b)
                        .collect(),
                )?;
                dc_fields.push(depth_consistency_cost(&transported, &sampled, &mask)?);
            }
            let re = clipped_term(&re_fields, weights.clip_percentile);
            let dc = clipped_term(&dc_fields, weights.clip_percentile);
            match dir {
                Direction::Forward => {
                    rep.reconstruction_fwd = re;
                    rep.consistency_fwd = dc;
                }
                Direction::Backward => {
                    rep.reconstruction_bwd = re;
                    rep.consistency_bwd = dc;
                }
            }
        }

        let mut smooth = 0.0;
        for (d, img) in disparity.iter().zip(&lv.images) {
            smooth += smoothness_cost(&normalize_disparity(d)?, img)?;
        }
        rep.smoothness = smooth;
        reports.push(rep);
    }
    Ok(LossReport::finish(*weights, reports))
}
