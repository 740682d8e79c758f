//! Run configuration: the bundled defaults, an optional `key = value` file
//! and command-line overrides, in that order.

use std::path::Path;
use std::str::FromStr;

use photoba::io::KeyValues;
use photoba::optimizer::OptimizeConfig;
use photoba::synthetic::{Corruption, MovingPatch, SceneSpec, Surface};
use photoba::{LossWeights, RigidPose};

use crate::error::CliError;

pub const BUNDLED: &str = include_str!("../config/default.conf");

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub depth: f64,
    pub tilt: f64,
    pub step: RigidPose,
    pub patch: Option<MovingPatch>,
    pub max_patch_fraction: f64,
    pub brightness: Vec<f64>,
}

impl SynthConfig {
    pub fn scene(&self, seed: u64) -> Result<SceneSpec, CliError> {
        Ok(SceneSpec::single(
            self.width,
            self.height,
            Surface::slanted(self.depth, self.tilt),
            seed,
        )?)
    }

    /// `None` when neither a patch nor brightness offsets are configured.
    pub fn corruption(&self) -> Option<Corruption> {
        (self.patch.is_some() || !self.brightness.is_empty()).then(|| Corruption {
            patch: self.patch.clone(),
            brightness: self.brightness.clone(),
            max_fraction: self.max_patch_fraction,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckConfig {
    pub problems: usize,
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub step: f64,
    pub tolerance: f64,
    pub coords: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub weights: LossWeights,
    pub optimize: OptimizeConfig,
    pub synth: SynthConfig,
    pub cap: f64,
    pub median_scaling: bool,
    pub boundary_threshold: f64,
    pub gradcheck: GradcheckConfig,
    pub range_sigma: f64,
    pub spatial_sigma: f64,
}

fn get<T: FromStr>(kv: &KeyValues, key: &str) -> Result<T, CliError> {
    kv.get(key)?
        .ok_or_else(|| CliError::Usage(format!("configuration is missing {key}")))
}

fn list<T: FromStr>(kv: &KeyValues, key: &str) -> Result<Vec<T>, CliError> {
    let raw = kv.raw(key).unwrap_or("");
    raw.split(|c: char| c.is_whitespace() || c == ',')
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse()
                .map_err(|_| CliError::Usage(format!("{key}: cannot parse {s:?}")))
        })
        .collect()
}

const KEYS: &[&str] = &[
    "ssim_mix",
    "dc_weight",
    "smooth_weight",
    "clip_q",
    "iterations",
    "lr",
    "pose_lr_scale",
    "lr_drop_factor",
    "lr_drop_at",
    "tolerance",
    "convergence_window",
    "scales",
    "stage_iterations",
    "consistency_warmup",
    "d_min",
    "d_max",
    "seed",
    "width",
    "height",
    "frames",
    "depth",
    "tilt",
    "step",
    "patch",
    "patch_seed",
    "max_patch_fraction",
    "brightness",
    "cap",
    "median_scaling",
    "boundary_threshold",
    "gradcheck_problems",
    "gradcheck_width",
    "gradcheck_height",
    "gradcheck_frames",
    "gradcheck_step",
    "gradcheck_tolerance",
    "gradcheck_coords",
    "range_sigma",
    "spatial_sigma",
];

impl RunConfig {
    pub fn bundled() -> Self {
        Self::from_key_values(&KeyValues::parse(BUNDLED).expect("bundled config parses"))
            .expect("bundled config is complete")
    }

    /// Bundled defaults overlaid with the entries of `path`.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let file = KeyValues::load(path).map_err(|e| CliError::io(path, e))?;
        let mut kv = KeyValues::parse(BUNDLED).expect("bundled config parses");
        for key in file.keys() {
            kv.set(key, file.raw(key).unwrap_or(""));
        }
        Self::from_key_values(&kv)
    }

    pub fn from_key_values(kv: &KeyValues) -> Result<Self, CliError> {
        if let Some(unknown) = kv.keys().find(|k| !KEYS.contains(k)) {
            return Err(CliError::Usage(format!("unknown configuration key {unknown:?}")));
        }
        let weights = LossWeights {
            ssim_mix: get(kv, "ssim_mix")?,
            dc_weight: get(kv, "dc_weight")?,
            smooth_weight: get(kv, "smooth_weight")?,
            clip_percentile: get(kv, "clip_q")?,
        };
        let optimize = OptimizeConfig {
            iterations: get(kv, "iterations")?,
            lr: get(kv, "lr")?,
            pose_lr_scale: get(kv, "pose_lr_scale")?,
            lr_drop_factor: get(kv, "lr_drop_factor")?,
            lr_drop_at: get(kv, "lr_drop_at")?,
            tolerance: get(kv, "tolerance")?,
            convergence_window: get(kv, "convergence_window")?,
            levels: get(kv, "scales")?,
            stage_iterations: list(kv, "stage_iterations")?,
            consistency_warmup: get(kv, "consistency_warmup")?,
            d_min: get(kv, "d_min")?,
            d_max: get(kv, "d_max")?,
            seed: get(kv, "seed")?,
        };
        let step: Vec<f64> = list(kv, "step")?;
        if step.len() != 6 {
            return Err(CliError::Usage(format!("step needs 6 numbers, found {}", step.len())));
        }
        let patch: Vec<i64> = list(kv, "patch")?;
        let patch = match patch.as_slice() {
            [] => None,
            &[x, y, w, h, dx, dy] if x >= 0 && y >= 0 && w > 0 && h > 0 => Some(MovingPatch {
                x: x as usize,
                y: y as usize,
                width: w as usize,
                height: h as usize,
                dx,
                dy,
                seed: get(kv, "patch_seed")?,
            }),
            _ => {
                return Err(CliError::Usage(
                    "patch needs x y width height dx dy with a non-empty rectangle".into(),
                ))
            }
        };
        let synth = SynthConfig {
            width: get(kv, "width")?,
            height: get(kv, "height")?,
            frames: get(kv, "frames")?,
            depth: get(kv, "depth")?,
            tilt: get(kv, "tilt")?,
            step: RigidPose::from_params(&step),
            patch,
            max_patch_fraction: get(kv, "max_patch_fraction")?,
            brightness: list(kv, "brightness")?,
        };
        let gradcheck = GradcheckConfig {
            problems: get(kv, "gradcheck_problems")?,
            width: get(kv, "gradcheck_width")?,
            height: get(kv, "gradcheck_height")?,
            frames: get(kv, "gradcheck_frames")?,
            step: get(kv, "gradcheck_step")?,
            tolerance: get(kv, "gradcheck_tolerance")?,
            coords: get(kv, "gradcheck_coords")?,
        };
        let cfg = Self {
            weights,
            optimize,
            synth,
            cap: get(kv, "cap")?,
            median_scaling: get(kv, "median_scaling")?,
            boundary_threshold: get(kv, "boundary_threshold")?,
            gradcheck,
            range_sigma: get(kv, "range_sigma")?,
            spatial_sigma: get(kv, "spatial_sigma")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.weights.validate()?;
        self.optimize.validate()?;
        if self.synth.frames < 2 {
            return Err(CliError::Usage("frames must be at least 2".into()));
        }
        if self.gradcheck.frames < 2 || self.gradcheck.problems == 0 {
            return Err(CliError::Usage("gradient check needs a problem with at least 2 frames".into()));
        }
        if !(self.gradcheck.step > 0.0 && self.gradcheck.tolerance > 0.0) {
            return Err(CliError::Usage("gradient check step and tolerance must be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_matches_library_defaults() {
        let cfg = RunConfig::bundled();
        assert_eq!(cfg.weights, LossWeights::default());
        assert_eq!(cfg.optimize, OptimizeConfig::default());
        assert_eq!(cfg.synth.patch, None);
        assert!(cfg.synth.corruption().is_none());
    }

    #[test]
    fn rejects_unknown_and_malformed_keys() {
        let mut kv = KeyValues::parse(BUNDLED).unwrap();
        kv.set("ssim_mx", 0.5);
        assert!(matches!(RunConfig::from_key_values(&kv), Err(CliError::Usage(_))));
        let mut kv = KeyValues::parse(BUNDLED).unwrap();
        kv.set("patch", "1 2 3");
        assert!(RunConfig::from_key_values(&kv).is_err());
        let mut kv = KeyValues::parse(BUNDLED).unwrap();
        kv.set("patch", "12 14 14 14 0 3");
        kv.set("brightness", "0, 0.1, -0.1");
        let cfg = RunConfig::from_key_values(&kv).unwrap();
        let c = cfg.synth.corruption().unwrap();
        assert_eq!(c.patch.unwrap().dy, 3);
        assert_eq!(c.brightness, vec![0.0, 0.1, -0.1]);
    }
}
