use log::{debug, warn};
use serde::{Deserialize, Serialize};

use super::adam::AdamState;
use crate::differentiation::{Objective, ParamLayout, ParamVector};
use crate::error::{Error, Result};
use crate::image_geometry::{DepthMap, RigidPose};
use crate::losses::{LossReport, LossWeights};
use crate::snippet::{ScaleSet, Snippet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizeConfig {
    /// Total Adam iterations over all stages.
    pub iterations: usize,
    pub lr: f64,
    /// Multiplier on `lr` for the pose parameters.
    pub pose_lr_scale: f64,
    /// Factor applied to `lr` once `lr_drop_at · iterations` steps have run.
    pub lr_drop_factor: f64,
    pub lr_drop_at: f64,
    /// Stop the final stage when its best objective improved by less than
    /// this fraction over the last `convergence_window` iterations. Checked
    /// only once the learning rate has dropped.
    pub tolerance: f64,
    pub convergence_window: usize,
    /// Pyramid levels of the objective.
    pub levels: usize,
    /// Iterations of the warm-up stages; stage `k` enables the `k + 1`
    /// coarsest levels. The final stage enables every level.
    pub stage_iterations: Vec<usize>,
    /// Iterations on every level, after the coarse stages, with the depth
    /// consistency term switched off. Warm-up stages never include it.
    pub consistency_warmup: usize,
    pub d_min: f64,
    pub d_max: f64,
    pub seed: u64,
}

impl Default for OptimizeConfig {
    fn default() -> Self {
        Self {
            iterations: 2000,
            lr: 1e-2,
            pose_lr_scale: 0.1,
            lr_drop_factor: 0.1,
            lr_drop_at: 0.75,
            tolerance: 1e-6,
            convergence_window: 100,
            levels: 4,
            stage_iterations: vec![150, 150, 150],
            consistency_warmup: 1400,
            d_min: 0.01,
            d_max: 10.0,
            seed: 0,
        }
    }
}

impl OptimizeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be positive".into()));
        }
        if !(self.d_min > 0.0 && self.d_min < self.d_max && self.d_max.is_finite()) {
            return Err(Error::Config(format!(
                "disparity bounds must satisfy 0 < d_min < d_max, got [{}, {}]",
                self.d_min, self.d_max
            )));
        }
        if !(self.lr > 0.0 && self.lr.is_finite() && self.pose_lr_scale > 0.0 && self.pose_lr_scale.is_finite()) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if !(self.lr_drop_factor > 0.0 && (0.0..=1.0).contains(&self.lr_drop_at)) {
            return Err(Error::Config("invalid learning-rate schedule".into()));
        }
        if self.tolerance.is_nan() || self.convergence_window == 0 {
            return Err(Error::Config("invalid convergence criterion".into()));
        }
        if self.levels == 0 {
            return Err(Error::Config("at least one pyramid level is required".into()));
        }
        Ok(())
    }

    fn lr_at(&self, iteration: usize) -> f64 {
        if iteration as f64 >= self.lr_drop_at * self.iterations as f64 {
            self.lr * self.lr_drop_factor
        } else {
            self.lr
        }
    }

    /// `(scales, iterations)` per warm-up stage; the final stage on the full
    /// objective takes what remains.
    fn stages(&self) -> (Vec<(ScaleSet, usize)>, usize) {
        let mut out = Vec::new();
        let mut used = 0;
        let coarse = self.stage_iterations.iter().take(self.levels - 1).enumerate();
        let warmups = coarse
            .map(|(k, &n)| (ScaleSet::coarsest(self.levels, k + 1), n))
            .chain(std::iter::once((ScaleSet::all(self.levels), self.consistency_warmup)));
        for (scales, n) in warmups {
            let n = n.min(self.iterations - used);
            if n > 0 {
                out.push((scales, n));
                used += n;
            }
        }
        (out, self.iterations - used)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    pub depths: Vec<DepthMap>,
    /// Consecutive poses `T(t → t+1)`.
    pub poses: Vec<RigidPose>,
    /// Objective at the returned solution, all levels enabled.
    pub report: LossReport,
    /// Objective at the initialization, all levels enabled.
    pub initial_objective: f64,
    /// Objective of every evaluated iterate, under the scales of its stage.
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Logistic map of unconstrained variables onto `[d_min, d_max]`.
#[derive(Debug, Clone, Copy)]
struct DisparityMap {
    lo: f64,
    span: f64,
}

impl DisparityMap {
    fn value(&self, z: f64) -> f64 {
        self.lo + self.span * logistic(z)
    }

    fn inverse(&self, d: f64) -> f64 {
        let s = (d - self.lo) / self.span;
        (s / (1.0 - s)).ln()
    }

    fn derivative(&self, z: f64) -> f64 {
        let s = logistic(z);
        self.span * s * (1.0 - s)
    }
}

fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

struct Variables {
    layout: ParamLayout,
    map: DisparityMap,
    pixels: usize,
}

impl Variables {
    fn params(&self, z: &[f64]) -> ParamVector {
        let n = self.layout.frames * self.pixels;
        let mut v = z.to_vec();
        for x in &mut v[..n] {
            *x = self.map.value(*x).clamp(self.map.lo, self.map.lo + self.map.span);
        }
        ParamVector::new(self.layout, v).expect("layout length")
    }

    fn chain(&self, z: &[f64], grad: &mut [f64]) {
        let n = self.layout.frames * self.pixels;
        for (g, zi) in grad[..n].iter_mut().zip(z) {
            *g *= self.map.derivative(*zi);
        }
    }
}

/// Jointly estimates per-frame depth and consecutive poses for a snippet by
/// minimizing the clipped multi-scale objective with Adam, warming up on the
/// coarsest levels. Poses start at identity and every disparity at the
/// geometric midpoint `√(d_min·d_max)` of its range. Returns the best iterate
/// seen under the full objective.
pub fn solve_snippet(snippet: &Snippet, config: &OptimizeConfig, weights: &LossWeights) -> Result<SolveResult> {
    solve_impl(snippet, config, weights, None)
}

/// [`solve_snippet`] starting from given disparities and poses. Disparities
/// are clamped into the open range `(d_min, d_max)`.
pub fn solve_snippet_from(
    snippet: &Snippet,
    config: &OptimizeConfig,
    weights: &LossWeights,
    initial: &ParamVector,
) -> Result<SolveResult> {
    solve_impl(snippet, config, weights, Some(initial))
}

fn solve_impl(
    snippet: &Snippet,
    config: &OptimizeConfig,
    weights: &LossWeights,
    initial: Option<&ParamVector>,
) -> Result<SolveResult> {
    config.validate()?;
    weights.validate()?;
    if snippet.len() < 2 {
        return Err(Error::invalid("snippet needs at least two frames"));
    }
    let layout = ParamLayout::new(snippet.len(), snippet.width(), snippet.height());
    let vars = Variables {
        layout,
        map: DisparityMap {
            lo: config.d_min,
            span: config.d_max - config.d_min,
        },
        pixels: layout.pixels(),
    };
    let full = Objective::new(snippet, *weights, ScaleSet::all(config.levels))?;
    let n_disp = layout.frames * layout.pixels();
    let mut z = vec![0.0; layout.len()];
    match initial {
        None => z[..n_disp].fill(vars.map.inverse((config.d_min * config.d_max).sqrt())),
        Some(p) => {
            if p.layout() != layout {
                return Err(Error::invalid("initial parameters do not match the snippet"));
            }
            let margin = 1e-9 * (config.d_max - config.d_min);
            for (zi, d) in z.iter_mut().zip(&p.values()[..n_disp]) {
                *zi = vars.map.inverse(d.clamp(config.d_min + margin, config.d_max - margin));
            }
            z[n_disp..].copy_from_slice(&p.values()[n_disp..]);
        }
    }

    let (initial_objective, init_grad) = full.value_and_gradient(&vars.params(&z))?;
    let finish = |z: &[f64], trace: Vec<f64>, iterations: usize, converged: bool| -> Result<SolveResult> {
        let params = vars.params(z);
        let report = full.evaluate(&params, false, None)?.report;
        Ok(SolveResult {
            depths: params.depth_maps()?,
            poses: params.poses(),
            report,
            initial_objective,
            trace,
            iterations,
            converged,
        })
    };
    if init_grad.max_abs() < 1e-12 {
        warn!("objective gradient vanishes at initialization; the snippet has no usable texture or motion");
        return finish(&z, vec![initial_objective], 0, true);
    }

    let mut trace = Vec::with_capacity(config.iterations);
    let mut best = (initial_objective, z.clone());
    let mut iteration = 0;
    let mut converged = false;
    let (mut stages, remaining) = config.stages();
    let last = stages.len();
    stages.push((ScaleSet::all(config.levels), remaining));
    let warmup_weights = LossWeights { dc_weight: 0.0, ..*weights };
    for (k, (scales, steps)) in stages.into_iter().enumerate() {
        let objective = if k == last {
            None
        } else {
            Some(Objective::new(snippet, warmup_weights, scales)?)
        };
        let objective = objective.as_ref().unwrap_or(&full);
        let mut adam_disp = AdamState::new(n_disp, config.lr);
        let mut adam_pose = AdamState::new(layout.len() - n_disp, config.lr * config.pose_lr_scale);
        let mut running_best: Vec<f64> = Vec::new();
        for _ in 0..steps {
            let (value, grad) = match objective.value_and_gradient(&vars.params(&z)) {
                Ok(vg) => vg,
                Err(e @ Error::NonFinite { .. }) => {
                    debug!("non-finite evaluation: {e}");
                    return Err(Error::Diverged {
                        iteration,
                        value: f64::NAN,
                        trace,
                    });
                }
                Err(e) => return Err(e),
            };
            trace.push(value);
            if k == last && value < best.0 {
                best = (value, z.clone());
            }
            if k == last && iteration as f64 >= config.lr_drop_at * config.iterations as f64 {
                running_best.push(running_best.last().map_or(value, |b: &f64| b.min(value)));
                if let Some(old) = running_best.iter().rev().nth(config.convergence_window) {
                    let now = *running_best.last().expect("pushed above");
                    if old - now <= config.tolerance * now.abs() {
                        converged = true;
                        break;
                    }
                }
            }
            let mut g = grad.values().to_vec();
            vars.chain(&z, &mut g);
            let lr = config.lr_at(iteration);
            adam_disp.lr = lr;
            adam_pose.lr = lr * config.pose_lr_scale;
            let (zd, zp) = z.split_at_mut(n_disp);
            let (gd, gp) = g.split_at(n_disp);
            adam_disp
                .update(zd, gd)
                .and_then(|_| adam_pose.update(zp, gp))
                .map_err(|_| Error::Diverged {
                    iteration,
                    value,
                    trace: trace.clone(),
                })?;
            iteration += 1;
        }
        debug!("stage {k} finished at iteration {iteration}, objective {:?}", trace.last());
    }
    // The last iterate is stepped but not yet evaluated.
    if !converged {
        let value = full.value(&vars.params(&z))?;
        if !value.is_finite() {
            return Err(Error::Diverged { iteration, value, trace });
        }
        trace.push(value);
        if value < best.0 {
            best = (value, z.clone());
        }
    }
    finish(&best.1, trace, iteration, converged)
}
