//! Binary PGM (P5) and PPM (P6) images, 8- or 16-bit.

use std::path::Path;

use crate::error::{Error, Result};
use crate::image_geometry::ImageGrid;

fn parse_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        offset,
        message: message.into(),
    }
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Header<'a> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                b if b.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(parse_err(start, format!("expected {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .expect("ascii digits")
            .parse()
            .map_err(|_| parse_err(start, format!("{what} out of range")))
    }
}

/// Decodes a P5 or P6 file held in memory; samples are divided by maxval.
pub fn decode_pnm(bytes: &[u8]) -> Result<ImageGrid> {
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        Some(_) => return Err(Error::Unsupported("only binary P5/P6 images are supported".into())),
        None => return Err(parse_err(0, "missing magic number")),
    };
    let mut h = Header { bytes, pos: 2 };
    if !bytes.get(2).is_some_and(|b| b.is_ascii_whitespace() || *b == b'#') {
        return Err(parse_err(2, "expected whitespace after magic number"));
    }
    let width = h.number("width")?;
    let height = h.number("height")?;
    h.skip_space_and_comments();
    let maxval_at = h.pos;
    let maxval = h.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(parse_err(maxval_at, format!("empty image {width}×{height}")));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(parse_err(maxval_at, format!("unsupported maxval {maxval}")));
    }
    if !bytes.get(h.pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(parse_err(h.pos, "expected a single whitespace byte before the payload"));
    }
    let data_start = h.pos + 1;
    let sample_bytes = if maxval > 255 { 2 } else { 1 };
    let count = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(channels))
        .ok_or_else(|| parse_err(0, "image dimensions overflow"))?;
    let need = count * sample_bytes;
    let payload = &bytes[data_start.min(bytes.len())..];
    if payload.len() < need {
        return Err(parse_err(
            bytes.len(),
            format!("truncated payload: {} of {need} bytes", payload.len()),
        ));
    }
    let scale = maxval as f64;
    let mut data = Vec::with_capacity(count);
    for i in 0..count {
        let v = if sample_bytes == 2 {
            u16::from_be_bytes([payload[2 * i], payload[2 * i + 1]]) as usize
        } else {
            payload[i] as usize
        };
        if v > maxval {
            return Err(parse_err(
                data_start + i * sample_bytes,
                format!("sample {v} exceeds maxval {maxval}"),
            ));
        }
        data.push(v as f64 / scale);
    }
    ImageGrid::new(width, height, channels, data)
}

/// Encodes a 1- or 3-channel image, rounding `v·maxval` after clamping to `[0, 1]`.
pub fn encode_pnm(img: &ImageGrid, bits: u8) -> Result<Vec<u8>> {
    let magic = match img.channels() {
        1 => "P5",
        3 => "P6",
        c => return Err(Error::Unsupported(format!("cannot store {c} channels as PGM/PPM"))),
    };
    let maxval: u32 = match bits {
        8 => 255,
        16 => 65535,
        b => return Err(Error::Unsupported(format!("{b}-bit samples"))),
    };
    let mut out = format!("{magic}\n{} {}\n{maxval}\n", img.width(), img.height()).into_bytes();
    for v in img.data() {
        let q = (v.clamp(0.0, 1.0) * maxval as f64).round() as u32;
        if bits == 16 {
            out.extend_from_slice(&(q as u16).to_be_bytes());
        } else {
            out.push(q as u8);
        }
    }
    Ok(out)
}

pub fn load_image(path: impl AsRef<Path>) -> Result<ImageGrid> {
    decode_pnm(&std::fs::read(path)?)
}

pub fn save_image(path: impl AsRef<Path>, img: &ImageGrid, bits: u8) -> Result<()> {
    std::fs::write(path, encode_pnm(img, bits)?)?;
    Ok(())
}
