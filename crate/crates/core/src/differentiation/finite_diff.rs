use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::engine::Objective;
use super::params::{GradientVector, ParamVector};
use crate::error::Result;

/// Central-difference partial derivative of `f` at `x` along coordinate `i`.
pub fn central_difference<F>(f: &mut F, x: &[f64], i: usize, step: f64) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let mut probe = x.to_vec();
    probe[i] = x[i] + step;
    let up = f(&probe)?;
    probe[i] = x[i] - step;
    let down = f(&probe)?;
    Ok((up - down) / (2.0 * step))
}

/// Central differences of `f` along each listed coordinate.
pub fn finite_difference_gradient<F>(mut f: F, x: &[f64], coords: &[usize], step: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    coords.iter().map(|&i| central_difference(&mut f, x, i, step)).collect()
}

/// Up to `max` distinct coordinates out of `len`, drawn with a fixed seed and
/// returned in increasing order. All coordinates when `len <= max`.
pub fn sample_coordinates(len: usize, max: usize, seed: u64) -> Vec<usize> {
    if len <= max {
        return (0..len).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = sample(&mut rng, len, max).into_vec();
    idx.sort_unstable();
    idx
}

/// Which difference formula a [`GradientSample`] was judged against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stencil {
    Central,
    /// Second-order one-sided, `(−3f(x) + 4f(x+h) − f(x+2h)) / 2h`.
    Forward,
    /// Second-order one-sided, `(3f(x) − 4f(x−h) + f(x−2h)) / 2h`.
    Backward,
}

/// One compared coordinate of a gradient check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientSample {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub relative_error: f64,
    pub stencil: Stencil,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientCheck {
    pub samples: Vec<GradientSample>,
    /// Objective value at the checked point.
    pub value: f64,
    /// Rounding resolution of the differences, `ε·|value| / step`.
    pub resolution: f64,
    /// Denominator floor used for the relative error.
    pub floor: f64,
    pub tolerance: f64,
}

impl GradientCheck {
    pub fn max_relative_error(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, s| m.max(s.relative_error))
    }

    pub fn worst(&self) -> Option<&GradientSample> {
        self.samples
            .iter()
            .max_by(|a, b| a.relative_error.total_cmp(&b.relative_error))
    }

    pub fn passed(&self) -> bool {
        self.max_relative_error() < self.tolerance
    }

    /// Coordinates judged against a one-sided difference.
    pub fn one_sided_count(&self) -> usize {
        self.samples.iter().filter(|s| s.stencil != Stencil::Central).count()
    }
}

/// `|a − n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if diff == 0.0 {
        return 0.0;
    }
    diff / analytic.abs().max(numeric.abs()).max(floor)
}

/// Judges `analytic` against the central difference, falling back to a
/// one-sided difference when that agrees better. The objective is only
/// piecewise smooth; when a kink (an L1 zero, a bilinear cell edge, a
/// validity flip) lies inside `[x−h, x+h]` the central difference measures
/// neither piece, while the one-sided difference on the side that holds `x`
/// still does.
fn judge<F>(f: &mut F, x: &[f64], i: usize, step: f64, f0: f64, analytic: f64, floor: f64) -> Result<(f64, f64, Stencil)>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let mut probe = x.to_vec();
    let mut at = |k: f64, probe: &mut Vec<f64>| {
        probe[i] = x[i] + k * step;
        f(probe)
    };
    let (up, down) = (at(1.0, &mut probe)?, at(-1.0, &mut probe)?);
    let central = (up - down) / (2.0 * step);
    let err = relative_error(analytic, central, floor);
    let mut best = (central, err, Stencil::Central);
    if err == 0.0 {
        return Ok(best);
    }
    let (up2, down2) = (at(2.0, &mut probe)?, at(-2.0, &mut probe)?);
    for (numeric, stencil) in [
        ((-3.0 * f0 + 4.0 * up - up2) / (2.0 * step), Stencil::Forward),
        ((3.0 * f0 - 4.0 * down + down2) / (2.0 * step), Stencil::Backward),
    ] {
        let e = relative_error(analytic, numeric, floor);
        if e < best.1 {
            best = (numeric, e, stencil);
        }
    }
    Ok(best)
}

/// Multiple of the rounding resolution that a coordinate's tolerance never
/// drops below.
pub const RESOLUTION_MARGIN: f64 = 10.0;

/// Compares the analytic gradient of `objective` at `params` against finite
/// differences on every pose coordinate and on disparities sampled up to a
/// total of `max_coords`. Clip thresholds and the
/// clipped pixels are held fixed at [`Objective::separating_thresholds`] for
/// every evaluation.
///
/// Differences of an objective of size `|f|` cannot resolve derivatives
/// below `ε·|f|/step`, so the relative-error floor is set where `tolerance`
/// times the floor equals [`RESOLUTION_MARGIN`] times that resolution.
pub fn check_gradient(
    objective: &Objective,
    params: &ParamVector,
    max_coords: usize,
    step: f64,
    tolerance: f64,
    seed: u64,
) -> Result<GradientCheck> {
    let pinned = objective.separating_thresholds(params)?;
    let base = objective.evaluate(params, true, Some(&pinned))?;
    let f0 = base.report.total;
    let resolution = f64::EPSILON * f0.abs() / step;
    let floor = RESOLUTION_MARGIN * resolution / tolerance;
    let grad: GradientVector = base.gradient.expect("gradient requested");
    let layout = params.layout();
    let disparities = layout.frames * layout.pixels();
    let mut coords: Vec<usize> = sample_coordinates(disparities, max_coords.saturating_sub(6 * layout.poses()), seed);
    coords.extend(disparities..layout.len());
    let mut f = |x: &[f64]| -> Result<f64> {
        let p = ParamVector::new(layout, x.to_vec())?;
        Ok(objective.evaluate(&p, false, Some(&pinned))?.report.total)
    };
    let mut samples = Vec::new();
    for index in coords {
        let analytic = grad.values()[index];
        let (numeric, relative_error, stencil) = judge(&mut f, params.values(), index, step, f0, analytic, floor)?;
        samples.push(GradientSample {
            index,
            analytic,
            numeric,
            relative_error,
            stencil,
        });
    }
    Ok(GradientCheck {
        samples,
        value: f0,
        resolution,
        floor,
        tolerance,
    })
}
