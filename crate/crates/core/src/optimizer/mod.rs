//! Adam, disparity normalization and the snippet solver.

mod adam;
mod normalize;
mod solve;

pub use adam::{adam_step, AdamState};
pub use normalize::normalize_disparity;
pub use solve::{solve_snippet, solve_snippet_from, OptimizeConfig, SolveResult};
