//! Single-channel little-endian PFM for depth maps. Rows are stored bottom
//! to top; invalid pixels are NaN. Values are written as `f32`.

use std::path::Path;

use log::warn;

use crate::error::{Error, Result};
use crate::image_geometry::DepthMap;

fn parse_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        offset,
        message: message.into(),
    }
}

/// Next whitespace-delimited header token and the offset just past it.
fn token(bytes: &[u8], mut pos: usize) -> Option<(&str, usize, usize)> {
    while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
        pos += 1;
    }
    let start = pos;
    while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
        pos += 1;
    }
    if start == pos {
        return None;
    }
    std::str::from_utf8(&bytes[start..pos]).ok().map(|t| (t, start, pos))
}

pub fn encode_pfm(depth: &DepthMap) -> Vec<u8> {
    let (w, h) = depth.dims();
    let mut out = format!("Pf\n{w} {h}\n-1.0\n").into_bytes();
    out.reserve(4 * w * h);
    for y in (0..h).rev() {
        for x in 0..w {
            let v = depth.get(x, y).map_or(f32::NAN, |d| d as f32);
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Non-finite or non-positive samples load as invalid; anything other than
/// NaN is reported with a warning.
pub fn decode_pfm(bytes: &[u8]) -> Result<DepthMap> {
    let (magic, _, pos) = token(bytes, 0).ok_or_else(|| parse_err(0, "missing magic number"))?;
    match magic {
        "Pf" => {}
        "PF" => return Err(Error::Unsupported("three-channel PFM; depth maps are single-channel".into())),
        _ => return Err(parse_err(0, format!("bad magic number {magic:?}"))),
    }
    let dim = |pos: usize, what: &str| -> Result<(usize, usize)> {
        let (t, start, end) = token(bytes, pos).ok_or_else(|| parse_err(pos, format!("expected {what}")))?;
        let v = t
            .parse::<usize>()
            .map_err(|_| parse_err(start, format!("{what} {t:?} is not a count")))?;
        if v == 0 {
            return Err(parse_err(start, format!("{what} is zero")));
        }
        Ok((v, end))
    };
    let (w, pos) = dim(pos, "width")?;
    let (h, pos) = dim(pos, "height")?;
    let (t, start, pos) = token(bytes, pos).ok_or_else(|| parse_err(pos, "expected scale"))?;
    let scale: f64 = t
        .parse()
        .map_err(|_| parse_err(start, format!("scale {t:?} is not a number")))?;
    if scale > 0.0 {
        return Err(Error::Unsupported("big-endian PFM (positive scale)".into()));
    }
    if scale == 0.0 || !scale.is_finite() {
        return Err(parse_err(start, format!("invalid scale {t}")));
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(parse_err(pos, "expected a single whitespace byte before the payload"));
    }
    let data_start = pos + 1;
    let need = w
        .checked_mul(h)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| parse_err(0, "dimensions overflow"))?;
    let payload = &bytes[data_start.min(bytes.len())..];
    if payload.len() < need {
        return Err(parse_err(
            bytes.len(),
            format!("truncated payload: {} of {need} bytes", payload.len()),
        ));
    }
    let mut values = vec![f64::NAN; w * h];
    let mut suspicious = 0usize;
    for (k, chunk) in payload[..need].chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().expect("4 bytes")) as f64;
        let (row, x) = (h - 1 - k / w, k % w);
        if !v.is_nan() && !(v.is_finite() && v > 0.0) {
            suspicious += 1;
        }
        values[row * w + x] = v;
    }
    if suspicious > 0 {
        warn!("{suspicious} non-positive or infinite depth samples loaded as invalid");
    }
    DepthMap::from_values(w, h, values)
}

pub fn load_depth(path: impl AsRef<Path>) -> Result<DepthMap> {
    decode_pfm(&std::fs::read(path)?)
}

pub fn save_depth(path: impl AsRef<Path>, depth: &DepthMap) -> Result<()> {
    std::fs::write(path, encode_pfm(depth))?;
    Ok(())
}
