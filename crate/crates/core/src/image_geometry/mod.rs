//! Pinhole camera, rigid motion, bilinear sampling and view synthesis.

mod camera;
mod grid;
mod pose;
mod sampling;
mod warp;

pub use camera::{backproject, project_pinhole, Intrinsics};
pub(crate) use grid::{check_dims, pool_children};
pub use grid::{DepthMap, ImageGrid, PixelCoord, ValidityMask};
pub use pose::{compose_poses, exp_so3, log_so3, right_jacobian, skew, transform_point, RigidPose};
pub use sampling::{bilinear_sample, bilinear_sample_into, sample_depth, sample_depth_at, BilinearCell};
pub use warp::{project_warp, synthesize_view, transform_depth, warp_coords};
