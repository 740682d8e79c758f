use crate::error::{Error, Result};
use crate::image_geometry::DepthMap;

/// Divides every valid disparity by the mean over valid entries, removing the
/// global scale before regularization.
pub fn normalize_disparity(d: &DepthMap) -> Result<DepthMap> {
    let n = d.valid_count();
    if n == 0 {
        return Err(Error::invalid("cannot normalize a disparity map with no valid entries"));
    }
    let mean = d.valid_values().sum::<f64>() / n as f64;
    if !(mean > 0.0 && mean.is_finite()) {
        return Err(Error::invalid(format!("disparity mean {mean} is not positive")));
    }
    Ok(d.map_valid(|v| v / mean))
}
