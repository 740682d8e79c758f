//! File formats: binary PGM/PPM images, PFM depth maps, and plain-text
//! intrinsics, poses and settings.

mod pfm;
mod pnm;
mod text;

pub use pfm::{decode_pfm, encode_pfm, load_depth, save_depth};
pub use pnm::{decode_pnm, encode_pnm, load_image, save_image};
pub use text::{format_intrinsics, format_poses, load_intrinsics, parse_intrinsics, parse_poses, KeyValues};
