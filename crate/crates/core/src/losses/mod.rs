//! Cost terms and the assembled multi-scale objective.

mod clip;
mod objective;
mod ssim;
mod terms;

pub use clip::{clip_costs, percentile, pooled_percentile};
pub(crate) use clip::clip_with_slope;
pub use objective::{snippet_objective, LossReport, ScaleReport, TermReport};
pub(crate) use objective::level_frames;
pub use ssim::{ssim, ssim_masked, SsimMap, SSIM_C1, SSIM_C2};
pub(crate) use ssim::{window_indices, SsimWindow};
pub use terms::{depth_consistency_cost, photometric_cost, smoothness_cost, CostField, LossWeights};
