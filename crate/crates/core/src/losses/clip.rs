use super::terms::CostField;
use crate::error::{Error, Result};

/// Nearest-rank percentile: the `⌈q·n/100⌉`-th smallest of `values`.
pub fn percentile(values: &[f64], q: f64) -> Result<f64> {
    if !(q > 0.0 && q <= 100.0) {
        return Err(Error::invalid(format!("percentile {q} outside (0, 100]")));
    }
    if values.is_empty() {
        return Err(Error::EmptyCost("percentile input".into()));
    }
    let n = values.len();
    let rank = ((q * n as f64 / 100.0).ceil() as usize).clamp(1, n);
    let mut buf = values.to_vec();
    let (_, kth, _) = buf.select_nth_unstable_by(rank - 1, f64::total_cmp);
    Ok(*kth)
}

/// Percentile over the valid entries of several cost fields pooled together.
pub fn pooled_percentile(fields: &[CostField], q: f64) -> Result<f64> {
    let pooled: Vec<f64> = fields.iter().flat_map(|f| f.valid_costs()).collect();
    percentile(&pooled, q)
}

/// `min(cost, threshold)` per pixel. The threshold is a constant: the clipped
/// value has unit slope below it and zero slope above.
pub fn clip_costs(costs: &CostField, threshold: f64) -> CostField {
    CostField {
        cost: costs.cost.iter().map(|c| c.min(threshold)).collect(),
        ..costs.clone()
    }
}

/// Clipped cost and its derivative with respect to the raw cost. At the
/// threshold itself the slope from below (1) is used.
#[inline]
pub(crate) fn clip_with_slope(cost: f64, threshold: f64) -> (f64, f64) {
    if cost <= threshold {
        (cost, 1.0)
    } else {
        (threshold, 0.0)
    }
}
