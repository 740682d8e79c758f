//! Fused evaluation of the multi-scale objective and its exact gradient.
//!
//! The forward pass mirrors [`crate::losses::snippet_objective`] term by
//! term (same pairs, masks, windows, clipping and summation order) but works
//! directly on disparities and keeps the per-pixel partials needed for a
//! reverse sweep. Clip thresholds are constants: a pixel above its threshold
//! contributes nothing to the gradient through that term.

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;

use super::params::{GradientVector, ParamLayout, ParamVector};
use crate::error::{Error, Result};
use crate::image_geometry::{exp_so3, pool_children, right_jacobian, BilinearCell, ImageGrid, Intrinsics, PixelCoord};
use crate::losses::{
    clip_with_slope, level_frames, percentile, window_indices, LossReport, LossWeights, ScaleReport, SsimWindow,
    TermReport,
};
use crate::snippet::{consistency_pairs, reconstruction_pairs, Direction, FramePair, ScaleSet, Snippet};
use crate::Z_MIN;

/// Clip thresholds per scale, in the order reconstruction forward/backward,
/// consistency forward/backward. Used to hold the thresholds fixed while
/// probing the objective around a point.
///
/// With a frozen clipped set, each pixel keeps the side of the threshold it
/// had when the set was recorded: clipped pixels contribute the threshold and
/// the rest contribute their cost, wherever the cost moves.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipThresholds {
    per_scale: Vec<[Option<f64>; 4]>,
    clipped: Option<Vec<[ClippedSet; 4]>>,
}

/// Per field of a term, per pixel: whether the pixel was clipped.
type ClippedSet = Vec<Vec<bool>>;

impl ClipThresholds {
    pub fn from_report(report: &LossReport) -> Self {
        Self {
            per_scale: report
                .scales
                .iter()
                .map(|s| {
                    [
                        s.reconstruction_fwd.threshold,
                        s.reconstruction_bwd.threshold,
                        s.consistency_fwd.threshold,
                        s.consistency_bwd.threshold,
                    ]
                })
                .collect(),
            clipped: None,
        }
    }

    fn get(&self, scale: usize, slot: usize) -> Option<f64> {
        self.per_scale.get(scale - 1).and_then(|s| s[slot])
    }

    fn frozen(&self, scale: usize, slot: usize) -> Option<&ClippedSet> {
        self.clipped.as_ref()?.get(scale - 1).map(|s| &s[slot])
    }
}

/// Resolved clipping of one term.
#[derive(Clone, Copy)]
struct Clip<'a> {
    threshold: f64,
    frozen: Option<&'a ClippedSet>,
}

impl Clip<'_> {
    /// Clipped cost of pixel `i` of field `field` and its slope in the cost.
    fn apply(&self, field: usize, i: usize, cost: f64) -> (f64, f64) {
        match self.frozen.and_then(|f| f.get(field)).and_then(|f| f.get(i)) {
            Some(true) => (self.threshold, 0.0),
            Some(false) => (cost, 1.0),
            None => clip_with_slope(cost, self.threshold),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: LossReport,
    pub gradient: Option<GradientVector>,
    /// Thresholds used and the pixels they clipped.
    pub clip: ClipThresholds,
}

impl Evaluation {
    pub fn value(&self) -> f64 {
        self.report.total
    }
}

/// Precomputed per-level data that does not depend on the parameters.
struct Level {
    width: usize,
    height: usize,
    intrinsics: Intrinsics,
    images: Vec<ImageGrid>,
    rays: Vec<Vector3<f64>>,
    /// `e^{−|∂I|}` for the forward difference to the right / below, per frame.
    edge_x: Vec<Vec<f64>>,
    edge_y: Vec<Vec<f64>>,
}

/// Objective over one snippet, ready to be evaluated at many parameter vectors.
pub struct Objective {
    weights: LossWeights,
    scales: ScaleSet,
    layout: ParamLayout,
    levels: Vec<Level>,
}

/// Per-pose rotation data shared by all pixels.
struct PoseData {
    rot: Matrix3<f64>,
    tau: Vector3<f64>,
    jac: Matrix3<f64>,
    jac_neg: Matrix3<f64>,
}

struct Step {
    pose: usize,
    inverted: bool,
    rot: Matrix3<f64>,
    tau: Vector3<f64>,
    /// `J_r(ω)` for a forward step, `J_r(−ω)` for an inverted one.
    jac: Matrix3<f64>,
    /// Product of the rotations applied after this step.
    after: Matrix3<f64>,
}

struct PairGeometry {
    source: usize,
    target: usize,
    rot: Matrix3<f64>,
    trans: Vector3<f64>,
    steps: Vec<Step>,
}

impl PairGeometry {
    fn new(pair: &FramePair, poses: &[PoseData]) -> Self {
        let mut rot = Matrix3::identity();
        let mut trans = Vector3::zeros();
        let mut steps: Vec<Step> = Vec::with_capacity(pair.chain.len());
        for s in &pair.chain {
            let p = &poses[s.pose];
            let (m, b, jac) = if s.inverted {
                let rt = p.rot.transpose();
                (rt, -(rt * p.tau), p.jac_neg)
            } else {
                (p.rot, p.tau, p.jac)
            };
            rot = m * rot;
            trans = m * trans + b;
            steps.push(Step {
                pose: s.pose,
                inverted: s.inverted,
                rot: p.rot,
                tau: p.tau,
                jac,
                after: Matrix3::identity(),
            });
        }
        let mut after = Matrix3::identity();
        for st in steps.iter_mut().rev() {
            st.after = after;
            after *= if st.inverted { st.rot.transpose() } else { st.rot };
        }
        Self {
            source: pair.source,
            target: pair.target,
            rot,
            trans,
            steps,
        }
    }

    /// Scaled transformed point `R_c·ray + d·t_c`.
    #[inline]
    fn point(&self, ray: &Vector3<f64>, d: f64) -> Vector3<f64> {
        self.rot * ray + self.trans * d
    }

    /// Pulls the adjoint of the scaled point back onto the disparity (returned)
    /// and the pose parameters (accumulated).
    fn backprop(&self, ray: &Vector3<f64>, d: f64, g: &Vector3<f64>, pose_grad: &mut [[f64; 6]]) -> f64 {
        let g_d = g.dot(&self.trans);
        let mut x = *ray;
        for st in &self.steps {
            let h = st.after.transpose() * g;
            let acc = &mut pose_grad[st.pose];
            if st.inverted {
                let v = x - st.tau * d;
                let rh = st.rot * h;
                let gw = -(st.jac.transpose() * v.cross(&rh));
                for i in 0..3 {
                    acc[i] += gw[i];
                    acc[3 + i] -= d * rh[i];
                }
                x = st.rot.transpose() * v;
            } else {
                let gw = st.jac.transpose() * x.cross(&(st.rot.transpose() * h));
                for i in 0..3 {
                    acc[i] += gw[i];
                    acc[3 + i] += d * h[i];
                }
                x = st.rot * x + st.tau * d;
            }
        }
        g_d
    }
}

#[derive(Clone, Copy)]
struct WarpSample {
    point: Vector3<f64>,
    cell: BilinearCell,
}

/// Adjoint of the scaled point given adjoints of the warped pixel coordinate.
#[inline]
fn projection_adjoint(k: &Intrinsics, p: &Vector3<f64>, g_u: f64, g_v: f64) -> Vector3<f64> {
    let iz = 1.0 / p.z;
    Vector3::new(
        k.fx * g_u * iz,
        k.fy * g_v * iz,
        -(k.fx * g_u * p.x + k.fy * g_v * p.y) * iz * iz,
    )
}

#[inline]
fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

struct ReconstructionData {
    cost: Vec<f64>,
    valid: Vec<bool>,
    synth: Vec<f64>,
    d_u: Vec<f64>,
    d_v: Vec<f64>,
    windows: Vec<Option<SsimWindow>>,
}

struct ConsistencyData {
    cost: Vec<f64>,
    valid: Vec<bool>,
    residual_sign: Vec<f64>,
    d_u: Vec<f64>,
    d_v: Vec<f64>,
}

fn pool(values: &[f64], width: usize, height: usize) -> Vec<f64> {
    let (w, h) = (width.div_ceil(2), height.div_ceil(2));
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let ch = pool_children(x, y, width, height);
            let s: f64 = ch.iter().map(|&(sx, sy)| values[sy * width + sx]).sum();
            out[y * w + x] = s / ch.len() as f64;
        }
    }
    out
}

/// Adds the transpose of [`pool`] applied to `coarse` into `fine`.
fn unpool_add(coarse: &[f64], fine: &mut [f64], width: usize, height: usize) {
    let w = width.div_ceil(2);
    for (i, g) in coarse.iter().enumerate() {
        if *g == 0.0 {
            continue;
        }
        let ch = pool_children(i % w, i / w, width, height);
        let share = g / ch.len() as f64;
        for (sx, sy) in ch {
            fine[sy * width + sx] += share;
        }
    }
}

impl Objective {
    pub fn new(snippet: &Snippet, weights: LossWeights, scales: ScaleSet) -> Result<Self> {
        weights.validate()?;
        if snippet.len() < 2 {
            return Err(Error::invalid("snippet needs at least two frames"));
        }
        scales.validate(snippet.width(), snippet.height())?;
        let layout = ParamLayout::new(snippet.len(), snippet.width(), snippet.height());
        let levels = level_frames(snippet, scales.levels())
            .into_iter()
            .map(|lv| {
                let (w, h) = lv.images[0].dims();
                let k = lv.intrinsics;
                let rays = (0..w * h)
                    .map(|i| k.ray(PixelCoord::new((i % w) as f64, (i / w) as f64)))
                    .collect();
                let (mut edge_x, mut edge_y) = (Vec::new(), Vec::new());
                for img in &lv.images {
                    let g = img.channel_mean();
                    let g = g.data();
                    let mut ex = vec![0.0; w * h];
                    let mut ey = vec![0.0; w * h];
                    for i in 0..w * h {
                        if i % w + 1 < w {
                            ex[i] = (-(g[i + 1] - g[i]).abs()).exp();
                        }
                        if i / w + 1 < h {
                            ey[i] = (-(g[i + w] - g[i]).abs()).exp();
                        }
                    }
                    edge_x.push(ex);
                    edge_y.push(ey);
                }
                Level {
                    width: w,
                    height: h,
                    intrinsics: k,
                    images: lv.images,
                    rays,
                    edge_x,
                    edge_y,
                }
            })
            .collect();
        Ok(Self {
            weights,
            scales,
            layout,
            levels,
        })
    }

    pub fn layout(&self) -> ParamLayout {
        self.layout
    }

    pub fn weights(&self) -> &LossWeights {
        &self.weights
    }

    pub fn scales(&self) -> &ScaleSet {
        &self.scales
    }

    /// Objective value only.
    pub fn value(&self, params: &ParamVector) -> Result<f64> {
        Ok(self.evaluate(params, false, None)?.report.total)
    }

    /// Objective value and gradient.
    pub fn value_and_gradient(&self, params: &ParamVector) -> Result<(f64, GradientVector)> {
        let e = self.evaluate(params, true, None)?;
        Ok((e.report.total, e.gradient.expect("gradient requested")))
    }

    /// Evaluates the objective, optionally with its gradient. With `pinned`,
    /// the given clip thresholds replace the percentiles of the current costs.
    pub fn evaluate(
        &self,
        params: &ParamVector,
        with_gradient: bool,
        pinned: Option<&ClipThresholds>,
    ) -> Result<Evaluation> {
        self.evaluate_with(params, with_gradient, pinned.map_or(Rule::Percentile, Rule::Pinned))
    }

    /// Thresholds placed halfway between each term's percentile cost and the
    /// next larger cost, with the set of pixels they clip frozen. Clipping
    /// with them selects the same pixels as the percentile does, and the
    /// objective stays smooth in every cost while that set is held.
    pub fn separating_thresholds(&self, params: &ParamVector) -> Result<ClipThresholds> {
        Ok(self.evaluate_with(params, false, Rule::Separating)?.clip)
    }

    fn evaluate_with(&self, params: &ParamVector, with_gradient: bool, rule: Rule<'_>) -> Result<Evaluation> {
        if params.layout() != self.layout {
            return Err(Error::invalid("parameter layout does not match the snippet"));
        }
        let n = self.layout.frames;
        for f in 0..n {
            if let Some(i) = params.disparity(f).iter().position(|d| !(d.is_finite() && *d > 0.0)) {
                return Err(Error::NonFinite {
                    term: "disparity parameter".into(),
                    location: format!("frame {f}, pixel ({}, {})", i % self.layout.width, i / self.layout.width),
                });
            }
        }
        let poses: Vec<PoseData> = params
            .poses()
            .iter()
            .map(|p| {
                if !p.is_finite() {
                    return Err(Error::NonFinite {
                        term: "pose parameter".into(),
                        location: format!("{p:?}"),
                    });
                }
                Ok(PoseData {
                    rot: exp_so3(&p.rotation),
                    tau: p.translation,
                    jac: right_jacobian(&p.rotation),
                    jac_neg: right_jacobian(&-p.rotation),
                })
            })
            .collect::<Result<_>>()?;

        // Disparity pyramid and matching gradient accumulators.
        let mut disp: Vec<Vec<Vec<f64>>> = vec![(0..n).map(|f| params.disparity(f).to_vec()).collect()];
        for l in 1..self.levels.len() {
            let prev = &self.levels[l - 1];
            let next = disp[l - 1].iter().map(|d| pool(d, prev.width, prev.height)).collect();
            disp.push(next);
        }
        let mut disp_grad: Vec<Vec<Vec<f64>>> = disp
            .iter()
            .map(|lv| lv.iter().map(|d| vec![0.0; d.len()]).collect())
            .collect();
        let mut pose_grad = vec![[0.0; 6]; poses.len()];

        let mut reports = Vec::with_capacity(self.levels.len());
        let mut clipped = Vec::with_capacity(self.levels.len());
        for (l, level) in self.levels.iter().enumerate() {
            let scale = l + 1;
            let mut sets: [ClippedSet; 4] = Default::default();
            if !self.scales.is_enabled(scale) {
                reports.push(ScaleReport::disabled(scale));
                clipped.push(sets);
                continue;
            }
            let mut rep = ScaleReport::disabled(scale);
            rep.enabled = true;
            let ctx = LevelEval {
                level,
                scale,
                disp: &disp[l],
                weights: &self.weights,
                scale_weight: ScaleSet::weight(scale),
            };
            let grads = with_gradient.then_some((&mut disp_grad[l], &mut pose_grad));
            let mut grads = grads;
            for (slot_base, dir) in Direction::BOTH.iter().enumerate() {
                let re_pin = rule.term(scale, slot_base);
                let dc_pin = rule.term(scale, 2 + slot_base);
                let (re, dc, re_set, dc_set) =
                    ctx.direction(*dir, &poses, re_pin, dc_pin, grads.as_mut().map(|(d, p)| (&mut **d, &mut **p)))?;
                sets[slot_base] = re_set;
                sets[2 + slot_base] = dc_set;
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
            rep.smoothness = ctx.smoothness(grads.as_mut().map(|(d, _)| &mut **d))?;
            reports.push(rep);
            clipped.push(sets);
        }
        let report = LossReport::finish(self.weights, reports);
        let mut clip = ClipThresholds::from_report(&report);
        clip.clipped = Some(clipped);
        if !report.total.is_finite() {
            return Err(Error::NonFinite {
                term: "total objective".into(),
                location: "all scales".into(),
            });
        }

        let gradient = with_gradient.then(|| {
            for l in (1..self.levels.len()).rev() {
                let (fine, coarse) = disp_grad.split_at_mut(l);
                let prev = &self.levels[l - 1];
                for (c, f) in coarse[0].iter().zip(fine[l - 1].iter_mut()) {
                    unpool_add(c, f, prev.width, prev.height);
                }
            }
            let mut g = GradientVector::zeros(self.layout);
            for (f, dg) in disp_grad[0].iter().enumerate() {
                g.values_mut()[self.layout.disparity_range(f)].copy_from_slice(dg);
            }
            for (k, pg) in pose_grad.iter().enumerate() {
                g.values_mut()[self.layout.pose_range(k)].copy_from_slice(pg);
            }
            g
        });
        if let Some(g) = &gradient {
            if let Some(i) = g.values().iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    term: "gradient".into(),
                    location: format!("{:?}", self.layout.classify(i)),
                });
            }
        }
        Ok(Evaluation { report, gradient, clip })
    }
}

type GradSinks<'a> = (&'a mut Vec<Vec<f64>>, &'a mut Vec<[f64; 6]>);

struct LevelEval<'a> {
    level: &'a Level,
    scale: usize,
    disp: &'a [Vec<f64>],
    weights: &'a LossWeights,
    scale_weight: f64,
}

impl LevelEval<'_> {
    fn warp(&self, geom: &PairGeometry) -> Vec<Option<WarpSample>> {
        let lv = self.level;
        let k = &lv.intrinsics;
        let d = &self.disp[geom.source];
        (0..lv.width * lv.height)
            .into_par_iter()
            .map(|i| {
                let ray = &lv.rays[i];
                let di = d[i];
                let q = geom.point(ray, di);
                if q.z <= Z_MIN * di {
                    return None;
                }
                let p = PixelCoord::new(
                    (i % lv.width) as f64 + k.fx * (q.x / q.z - ray.x),
                    (i / lv.width) as f64 + k.fy * (q.y / q.z - ray.y),
                );
                BilinearCell::locate(p, lv.width, lv.height).map(|cell| WarpSample { point: q, cell })
            })
            .collect()
    }

    fn reconstruction(&self, geom: &PairGeometry, warps: &[Option<WarpSample>]) -> Result<ReconstructionData> {
        let lv = self.level;
        let (w, h) = (lv.width, lv.height);
        let target = &lv.images[geom.target];
        let real = &lv.images[geom.source];
        let ch = target.channels();
        let mut synth = vec![0.0; w * h * ch];
        let mut d_u = vec![0.0; w * h * ch];
        let mut d_v = vec![0.0; w * h * ch];
        let valid: Vec<bool> = warps.iter().map(Option::is_some).collect();
        for (i, ws) in warps.iter().enumerate() {
            let Some(ws) = ws else { continue };
            let [a, b, c, e] = ws.cell.corners();
            for k in 0..ch {
                let (v, du, dv) = ws.cell.interpolate([
                    target.get(a.0, a.1, k),
                    target.get(b.0, b.1, k),
                    target.get(c.0, c.1, k),
                    target.get(e.0, e.1, k),
                ]);
                synth[i * ch + k] = v;
                d_u[i * ch + k] = du;
                d_v[i * ch + k] = dv;
            }
        }
        let alpha = self.weights.ssim_mix;
        let per_pixel: Vec<(f64, Vec<Option<SsimWindow>>)> = (0..w * h)
            .into_par_iter()
            .map(|i| {
                if !valid[i] {
                    return (0.0, vec![None; ch]);
                }
                let mut idx = Vec::with_capacity(9);
                window_indices(i % w, i / w, w, h, &valid, &mut idx);
                let (mut xs, mut ys) = (Vec::with_capacity(9), Vec::with_capacity(9));
                let mut total = 0.0;
                let mut wins = Vec::with_capacity(ch);
                for k in 0..ch {
                    xs.clear();
                    ys.clear();
                    for &j in &idx {
                        xs.push(synth[j * ch + k]);
                        ys.push(real.data()[j * ch + k]);
                    }
                    let win = SsimWindow::eval(&xs, &ys);
                    let l1 = (synth[i * ch + k] - real.data()[i * ch + k]).abs();
                    total += alpha * (1.0 - win.value) / 2.0 + (1.0 - alpha) * l1;
                    wins.push(Some(win));
                }
                (total / ch as f64, wins)
            })
            .collect();
        let mut cost = Vec::with_capacity(w * h);
        let mut windows = Vec::with_capacity(w * h * ch);
        for (i, (c, wins)) in per_pixel.into_iter().enumerate() {
            if valid[i] && !c.is_finite() {
                return Err(Error::NonFinite {
                    term: format!("reconstruction (scale {}, frames {}→{})", self.scale, geom.source, geom.target),
                    location: format!("pixel ({}, {})", i % w, i / w),
                });
            }
            cost.push(c);
            windows.extend(wins);
        }
        Ok(ReconstructionData {
            cost,
            valid,
            synth,
            d_u,
            d_v,
            windows,
        })
    }

    fn consistency(&self, geom: &PairGeometry, warps: &[Option<WarpSample>]) -> Result<ConsistencyData> {
        let lv = self.level;
        let n = lv.width * lv.height;
        let src = &self.disp[geom.source];
        let dst = &self.disp[geom.target];
        let mut data = ConsistencyData {
            cost: vec![0.0; n],
            valid: vec![false; n],
            residual_sign: vec![0.0; n],
            d_u: vec![0.0; n],
            d_v: vec![0.0; n],
        };
        for (i, ws) in warps.iter().enumerate() {
            let Some(ws) = ws else { continue };
            let corners = ws.cell.corners().map(|(x, y)| 1.0 / dst[y * lv.width + x]);
            let (sampled, du, dv) = ws.cell.interpolate(corners);
            let transported = ws.point.z / src[i];
            let r = transported - sampled;
            if !r.is_finite() {
                return Err(Error::NonFinite {
                    term: format!("depth consistency (scale {}, frames {}→{})", self.scale, geom.source, geom.target),
                    location: format!("pixel ({}, {})", i % lv.width, i / lv.width),
                });
            }
            data.cost[i] = r.abs();
            data.valid[i] = true;
            data.residual_sign[i] = sign(r);
            data.d_u[i] = du;
            data.d_v[i] = dv;
        }
        Ok(data)
    }

    /// Both clipped terms of one traversal direction, with optional backprop.
    fn direction(
        &self,
        dir: Direction,
        poses: &[PoseData],
        re_pin: TermRule,
        dc_pin: TermRule,
        mut grads: Option<GradSinks<'_>>,
    ) -> Result<(TermReport, TermReport, ClippedSet, ClippedSet)> {
        let n_frames = self.disp.len();
        let dc_pairs = consistency_pairs(n_frames, dir);
        let re_pairs = reconstruction_pairs(n_frames, dir);

        let dc_geoms: Vec<PairGeometry> = dc_pairs.iter().map(|p| PairGeometry::new(p, poses)).collect();
        let dc_warps: Vec<Vec<Option<WarpSample>>> = dc_geoms.iter().map(|g| self.warp(g)).collect();
        let re_index: Vec<usize> = re_pairs
            .iter()
            .map(|rp| dc_pairs.iter().position(|dp| dp == rp).expect("consecutive pairs are consistency pairs"))
            .collect();

        let re_data: Vec<ReconstructionData> = re_index
            .iter()
            .map(|&j| self.reconstruction(&dc_geoms[j], &dc_warps[j]))
            .collect::<Result<_>>()?;
        let dc_data: Vec<ConsistencyData> = dc_geoms
            .iter()
            .zip(&dc_warps)
            .map(|(g, w)| self.consistency(g, w))
            .collect::<Result<_>>()?;

        let q = self.weights.clip_percentile;
        let re_clip = resolve_clip(re_pin, re_data.iter().map(|d| (&d.cost, &d.valid)), q);
        let dc_clip = resolve_clip(dc_pin, dc_data.iter().map(|d| (&d.cost, &d.valid)), q);
        let (re_report, re_set) = clipped_report(re_clip, re_data.iter().map(|d| (&d.cost, &d.valid)));
        let (dc_report, dc_set) = clipped_report(dc_clip, dc_data.iter().map(|d| (&d.cost, &d.valid)));

        if let Some((disp_grad, pose_grad)) = grads.as_mut() {
            if let Some(clip) = re_clip {
                for (field, (data, &j)) in re_data.iter().zip(&re_index).enumerate() {
                    self.backprop_reconstruction(&dc_geoms[j], &dc_warps[j], data, clip, field, disp_grad, pose_grad);
                }
            }
            if let Some(clip) = dc_clip {
                for (field, ((geom, warps), data)) in dc_geoms.iter().zip(&dc_warps).zip(&dc_data).enumerate() {
                    self.backprop_consistency(geom, warps, data, clip, field, disp_grad, pose_grad);
                }
            }
        }
        Ok((re_report, dc_report, re_set, dc_set))
    }

    fn backprop_reconstruction(
        &self,
        geom: &PairGeometry,
        warps: &[Option<WarpSample>],
        data: &ReconstructionData,
        clip: Clip<'_>,
        field: usize,
        disp_grad: &mut [Vec<f64>],
        pose_grad: &mut [[f64; 6]],
    ) {
        let lv = self.level;
        let (w, h) = (lv.width, lv.height);
        let real = lv.images[geom.source].data();
        let ch = lv.images[geom.source].channels();
        let alpha = self.weights.ssim_mix;
        let mut adj = vec![0.0; w * h * ch];
        let mut idx = Vec::with_capacity(9);
        for i in 0..w * h {
            if !data.valid[i] {
                continue;
            }
            let (_, slope) = clip.apply(field, i, data.cost[i]);
            if slope == 0.0 {
                continue;
            }
            let a = self.scale_weight * slope / ch as f64;
            window_indices(i % w, i / w, w, h, &data.valid, &mut idx);
            for k in 0..ch {
                let win = data.windows[i * ch + k].as_ref().expect("valid pixel has a window");
                let s_coef = -a * alpha / 2.0;
                for &j in &idx {
                    adj[j * ch + k] += s_coef * win.grad_x(data.synth[j * ch + k], real[j * ch + k]);
                }
                adj[i * ch + k] += a * (1.0 - alpha) * sign(data.synth[i * ch + k] - real[i * ch + k]);
            }
        }
        let k = &lv.intrinsics;
        let src_disp = &self.disp[geom.source];
        for (i, ws) in warps.iter().enumerate() {
            let Some(ws) = ws else { continue };
            let (mut g_u, mut g_v) = (0.0, 0.0);
            for c in 0..ch {
                g_u += adj[i * ch + c] * data.d_u[i * ch + c];
                g_v += adj[i * ch + c] * data.d_v[i * ch + c];
            }
            if g_u == 0.0 && g_v == 0.0 {
                continue;
            }
            let g = projection_adjoint(k, &ws.point, g_u, g_v);
            disp_grad[geom.source][i] += geom.backprop(&lv.rays[i], src_disp[i], &g, pose_grad);
        }
    }

    fn backprop_consistency(
        &self,
        geom: &PairGeometry,
        warps: &[Option<WarpSample>],
        data: &ConsistencyData,
        clip: Clip<'_>,
        field: usize,
        disp_grad: &mut [Vec<f64>],
        pose_grad: &mut [[f64; 6]],
    ) {
        let lv = self.level;
        let k = &lv.intrinsics;
        let src = &self.disp[geom.source];
        let dst = &self.disp[geom.target];
        for (i, ws) in warps.iter().enumerate() {
            let Some(ws) = ws else { continue };
            let (_, slope) = clip.apply(field, i, data.cost[i]);
            let a = self.scale_weight * self.weights.dc_weight * slope * data.residual_sign[i];
            if a == 0.0 {
                continue;
            }
            let d = src[i];
            let mut g = projection_adjoint(k, &ws.point, -a * data.d_u[i], -a * data.d_v[i]);
            g.z += a / d;
            let mut g_d = -a * ws.point.z / (d * d);
            g_d += geom.backprop(&lv.rays[i], d, &g, pose_grad);
            disp_grad[geom.source][i] += g_d;
            for ((x, y), wk) in ws.cell.corners().into_iter().zip(ws.cell.weights()) {
                let j = y * lv.width + x;
                disp_grad[geom.target][j] += a * wk / (dst[j] * dst[j]);
            }
        }
    }

    fn smoothness(&self, grads: Option<&mut Vec<Vec<f64>>>) -> Result<f64> {
        let lv = self.level;
        let (w, h) = (lv.width, lv.height);
        let n = w * h;
        let coef = self.scale_weight * self.weights.smooth_weight;
        let mut total = 0.0;
        let mut grads = grads;
        for (f, d) in self.disp.iter().enumerate() {
            let mean = d.iter().sum::<f64>() / n as f64;
            let norm: Vec<f64> = d.iter().map(|v| v / mean).collect();
            let (ex, ey) = (&lv.edge_x[f], &lv.edge_y[f]);
            let mut g_norm = vec![0.0; n];
            for y in 0..h {
                for x in 0..w {
                    let i = y * w + x;
                    if x + 1 < w {
                        let diff = norm[i + 1] - norm[i];
                        total += diff.abs() * ex[i];
                        let s = sign(diff) * ex[i];
                        g_norm[i + 1] += s;
                        g_norm[i] -= s;
                    }
                    if y + 1 < h {
                        let diff = norm[i + w] - norm[i];
                        total += diff.abs() * ey[i];
                        let s = sign(diff) * ey[i];
                        g_norm[i + w] += s;
                        g_norm[i] -= s;
                    }
                }
            }
            if let Some(dg) = grads.as_mut() {
                if coef != 0.0 {
                    let proj: f64 = g_norm.iter().zip(&norm).map(|(g, v)| g * v).sum::<f64>() / n as f64;
                    for (out, g) in dg[f].iter_mut().zip(&g_norm) {
                        *out += coef * (g - proj) / mean;
                    }
                }
            }
        }
        if !total.is_finite() {
            return Err(Error::NonFinite {
                term: format!("smoothness (scale {})", self.scale),
                location: "disparity map".into(),
            });
        }
        Ok(total)
    }
}

#[derive(Clone, Copy)]
enum Rule<'a> {
    Percentile,
    Separating,
    Pinned(&'a ClipThresholds),
}

#[derive(Clone, Copy)]
enum TermRule<'a> {
    Percentile,
    Separating,
    Fixed(Option<f64>, Option<&'a ClippedSet>),
}

impl<'a> Rule<'a> {
    fn term(&self, scale: usize, slot: usize) -> TermRule<'a> {
        match *self {
            Rule::Percentile => TermRule::Percentile,
            Rule::Separating => TermRule::Separating,
            Rule::Pinned(t) => TermRule::Fixed(t.get(scale, slot), t.frozen(scale, slot)),
        }
    }
}

fn resolve_clip<'a, 'b>(
    rule: TermRule<'a>,
    fields: impl Iterator<Item = (&'b Vec<f64>, &'b Vec<bool>)>,
    q: f64,
) -> Option<Clip<'a>> {
    let frozen = match rule {
        TermRule::Fixed(_, f) => f,
        _ => None,
    };
    resolve_threshold(rule, fields, q).map(|threshold| Clip { threshold, frozen })
}

fn resolve_threshold<'a>(
    rule: TermRule<'_>,
    fields: impl Iterator<Item = (&'a Vec<f64>, &'a Vec<bool>)>,
    q: f64,
) -> Option<f64> {
    let pooled: Vec<f64> = fields
        .flat_map(|(c, v)| c.iter().zip(v).filter(|(_, ok)| **ok).map(|(c, _)| *c))
        .collect();
    if pooled.is_empty() {
        return None;
    }
    let t = match rule {
        TermRule::Fixed(Some(t), _) => return Some(t),
        _ => percentile(&pooled, q).ok()?,
    };
    if let TermRule::Separating = rule {
        let next = pooled.iter().copied().filter(|c| *c > t).fold(f64::INFINITY, f64::min);
        return Some(if next.is_finite() { 0.5 * (t + next) } else { t + t.abs().max(1.0) });
    }
    Some(t)
}

fn clipped_report<'a>(
    clip: Option<Clip<'_>>,
    fields: impl Iterator<Item = (&'a Vec<f64>, &'a Vec<bool>)>,
) -> (TermReport, ClippedSet) {
    let Some(clip) = clip else {
        return (TermReport::default(), Vec::new());
    };
    let mut value = 0.0;
    let mut valid_pixels = 0;
    let mut set = Vec::new();
    for (field, (cost, valid)) in fields.enumerate() {
        let mut field_sum = 0.0;
        let mut clipped = vec![false; cost.len()];
        for (i, (c, ok)) in cost.iter().zip(valid).enumerate() {
            if *ok {
                let (v, slope) = clip.apply(field, i, *c);
                field_sum += v;
                clipped[i] = slope == 0.0;
                valid_pixels += 1;
            }
        }
        value += field_sum;
        set.push(clipped);
    }
    let report = TermReport {
        value,
        threshold: Some(clip.threshold),
        valid_pixels,
    };
    (report, set)
}

/// Objective over all four scales and its exact gradient.
pub fn objective_and_gradient(
    snippet: &Snippet,
    params: &ParamVector,
    weights: &LossWeights,
) -> Result<(f64, GradientVector)> {
    Objective::new(snippet, *weights, ScaleSet::all(4))?.value_and_gradient(params)
}
