//! Objective evaluation with exact gradients, and a finite-difference oracle.

mod engine;
mod finite_diff;
mod params;

pub use engine::{objective_and_gradient, ClipThresholds, Evaluation, Objective};
pub use finite_diff::{
    central_difference, check_gradient, finite_difference_gradient, relative_error, sample_coordinates,
    GradientCheck, GradientSample, Stencil, RESOLUTION_MARGIN,
};
pub use params::{GradientVector, ParamClass, ParamLayout, ParamVector};
