//! Intrinsics, pose and `key = value` config text files.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::image_geometry::{compose_poses, Intrinsics, RigidPose};

fn strip_comment(line: &str) -> &str {
    line.split_once('#').map_or(line, |(a, _)| a).trim()
}

/// `fx fy cx cy`, whitespace separated; `#` starts a comment.
pub fn parse_intrinsics(text: &str) -> Result<Intrinsics> {
    let fields: Vec<&str> = text.lines().flat_map(|l| strip_comment(l).split_whitespace()).collect();
    if fields.len() != 4 {
        return Err(Error::Config(format!(
            "intrinsics need exactly 4 numbers (fx fy cx cy), found {}",
            fields.len()
        )));
    }
    let mut v = [0.0; 4];
    for (slot, f) in v.iter_mut().zip(&fields) {
        *slot = f
            .parse()
            .map_err(|_| Error::Config(format!("intrinsics field {f:?} is not a number")))?;
    }
    if !(v[0] > 0.0 && v[1] > 0.0) {
        return Err(Error::Config(format!("focal lengths must be positive, got {} {}", v[0], v[1])));
    }
    Intrinsics::new(v[0], v[1], v[2], v[3])
}

pub fn load_intrinsics(path: impl AsRef<Path>) -> Result<Intrinsics> {
    parse_intrinsics(&std::fs::read_to_string(path)?)
}

pub fn format_intrinsics(k: &Intrinsics) -> String {
    format!("{} {} {} {}\n", k.fx, k.fy, k.cx, k.cy)
}

/// One `consecutive t t+1 rx ry rz tx ty tz` line per consecutive pose,
/// then `absolute 0 t ...` lines for the composed motion from frame 0.
pub fn format_poses(consecutive: &[RigidPose]) -> Result<String> {
    let mut out = String::from("# kind from to rx ry rz tx ty tz (axis-angle, then translation)\n");
    let line = |kind: &str, a: usize, b: usize, p: &RigidPose| {
        let v = p.to_params();
        format!("{kind} {a} {b} {} {} {} {} {} {}\n", v[0], v[1], v[2], v[3], v[4], v[5])
    };
    for (t, p) in consecutive.iter().enumerate() {
        out += &line("consecutive", t, t + 1, p);
    }
    for t in 1..consecutive.len() {
        out += &line("absolute", 0, t + 1, &compose_poses(&consecutive[..=t])?);
    }
    Ok(out)
}

/// Reads the `consecutive` lines of [`format_poses`] output in order.
pub fn parse_poses(text: &str) -> Result<Vec<RigidPose>> {
    let mut poses = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let fields: Vec<&str> = strip_comment(raw).split_whitespace().collect();
        match fields.first() {
            None | Some(&"absolute") => continue,
            Some(&"consecutive") => {}
            Some(other) => return Err(Error::Config(format!("line {}: unknown pose kind {other:?}", n + 1))),
        }
        if fields.len() != 9 {
            return Err(Error::Config(format!("line {}: expected 9 fields, found {}", n + 1, fields.len())));
        }
        let from: usize = fields[1]
            .parse()
            .map_err(|_| Error::Config(format!("line {}: bad frame index", n + 1)))?;
        if from != poses.len() {
            return Err(Error::Config(format!("line {}: poses out of order", n + 1)));
        }
        let mut p = [0.0; 6];
        for (slot, f) in p.iter_mut().zip(&fields[3..]) {
            *slot = f
                .parse()
                .map_err(|_| Error::Config(format!("line {}: {f:?} is not a number", n + 1)))?;
        }
        poses.push(RigidPose::from_params(&p));
    }
    Ok(poses)
}

/// Flat `key = value` settings. Keys are unique; `#` starts a comment.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyValues {
    entries: BTreeMap<String, (String, usize)>,
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = strip_comment(raw);
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() || k.contains(char::is_whitespace) {
                return Err(Error::Config(format!("line {}: invalid key {k:?}", n + 1)));
            }
            if entries.insert(k.to_string(), (v.to_string(), n + 1)).is_some() {
                return Err(Error::Config(format!("line {}: duplicate key {k:?}", n + 1)));
            }
        }
        Ok(Self { entries })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.entries.insert(key.to_string(), (value.to_string(), 0));
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|(v, _)| v.as_str())
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.entries.get(key) {
            None => Ok(None),
            Some((v, line)) => v.parse().map(Some).map_err(|_| {
                let at = if *line > 0 { format!("line {line}: ") } else { String::new() };
                Error::Config(format!("{at}cannot parse {key} = {v:?}"))
            }),
        }
    }

    /// Overwrites `slot` when the key is present.
    pub fn read_into<T: FromStr>(&self, key: &str, slot: &mut T) -> Result<()> {
        if let Some(v) = self.get(key)? {
            *slot = v;
        }
        Ok(())
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    #[test]
    fn intrinsics_examples() {
        let k = parse_intrinsics("100 100 32 24").unwrap();
        assert_eq!((k.fx, k.fy, k.cx, k.cy), (100.0, 100.0, 32.0, 24.0));
        assert!(parse_intrinsics("100 100 32").is_err());
        assert!(parse_intrinsics("-1 100 32 24").is_err());
        assert!(parse_intrinsics("# camera\n100 100\n32 24 # principal point\n").is_ok());
        assert_eq!(parse_intrinsics(&format_intrinsics(&k)).unwrap(), k);
    }

    #[test]
    fn poses_round_trip() {
        let ps = vec![
            RigidPose::new(Vector3::new(0.01, -0.2, 0.3), Vector3::new(1.0 / 3.0, -2.0, 1e-17)),
            RigidPose::from_translation(Vector3::new(-0.08, 0.0, 0.0)),
        ];
        let text = format_poses(&ps).unwrap();
        assert_eq!(text.lines().filter(|l| l.starts_with("absolute")).count(), 1);
        assert_eq!(parse_poses(&text).unwrap(), ps);
        assert!(parse_poses("consecutive 1 2 0 0 0 0 0 0").is_err());
        assert!(parse_poses("consecutive 0 1 0 0 0").is_err());
    }

    #[test]
    fn key_values() {
        let kv = KeyValues::parse("# weights\nssim_mix = 0.85\n\ndc_weight=1 # inline\nname = a b\n").unwrap();
        assert_eq!(kv.get::<f64>("ssim_mix").unwrap(), Some(0.85));
        assert_eq!(kv.get::<f64>("dc_weight").unwrap(), Some(1.0));
        assert_eq!(kv.raw("name"), Some("a b"));
        assert_eq!(kv.get::<f64>("missing").unwrap(), None);
        let err = kv.get::<usize>("ssim_mix").unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
        assert!(KeyValues::parse("a = 1\na = 2").is_err());
        assert!(KeyValues::parse("just words").is_err());
        let mut x = 3usize;
        KeyValues::parse("x = 7").unwrap().read_into("x", &mut x).unwrap();
        assert_eq!(x, 7);
    }
}
