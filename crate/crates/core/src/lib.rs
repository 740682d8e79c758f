//! Direct photometric bundle adjustment for short monocular snippets.
//!
//! Per-frame inverse-depth maps and the rigid motions between consecutive
//! frames are optimized jointly against a multi-scale objective built from
//! view-synthesis (SSIM + L1), cross-sequence depth consistency and
//! edge-aware disparity smoothness, with percentile clipping of the
//! per-pixel residuals and forward/backward traversal of the snippet.
//!
//! The crate is organised bottom-up:
//!
//! - [`image_geometry`]: pinhole camera, axis-angle rigid poses, bilinear
//!   sampling and view synthesis.
//! - [`losses`]: every cost term and the assembled objective, evaluated by
//!   composing the per-operation functions.
//! - [`differentiation`]: a fused evaluator returning the objective together
//!   with its exact gradient, and a central-difference oracle.
//! - [`optimizer`]: Adam, disparity normalization and the snippet solver.
//! - [`synthetic`]: ray-cast scenes with exact ground truth.
//! - [`evaluation`] and [`upsampling`]: depth metrics, pyramids and
//!   edge-guided depth upsampling.
//! - [`io`]: PGM/PPM/PFM, intrinsics, pose and config files.

pub mod differentiation;
pub mod error;
pub mod evaluation;
pub mod image_geometry;
pub mod io;
pub mod losses;
pub mod optimizer;
pub mod snippet;
pub mod synthetic;
pub mod upsampling;

pub use error::{Error, Result};
pub use image_geometry::{DepthMap, ImageGrid, Intrinsics, PixelCoord, RigidPose, ValidityMask};
pub use losses::{LossReport, LossWeights};
pub use snippet::Snippet;

/// Points whose depth in the target camera is at or below this value are
/// treated as behind the camera.
pub const Z_MIN: f64 = 1e-3;
