//! Deterministic ray-cast scenes with exact depth and pose ground truth, and
//! controlled violations of the static-scene assumption.

use std::f64::consts::TAU;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::differentiation::ParamVector;
use crate::error::{Error, Result};
use crate::image_geometry::{compose_poses, DepthMap, ImageGrid, Intrinsics, PixelCoord, RigidPose, ValidityMask};
use crate::snippet::Snippet;
use crate::Z_MIN;

/// Geometry in the coordinates of the first camera (+z forward).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Surface {
    /// Infinite plane through `point` with normal `normal`.
    Plane { point: Vector3<f64>, normal: Vector3<f64> },
    /// Axis-aligned box.
    Box { min: Vector3<f64>, max: Vector3<f64> },
}

impl Surface {
    pub fn fronto_parallel(depth: f64) -> Self {
        Surface::Plane {
            point: Vector3::new(0.0, 0.0, depth),
            normal: Vector3::z(),
        }
    }

    /// Plane through `(0, 0, depth)` rotated by `tilt` radians about the
    /// vertical axis, so depth varies along image rows.
    pub fn slanted(depth: f64, tilt: f64) -> Self {
        Surface::Plane {
            point: Vector3::new(0.0, 0.0, depth),
            normal: Vector3::new(tilt.sin(), 0.0, tilt.cos()),
        }
    }

    /// Ray parameter of the first intersection in front of `origin`.
    fn intersect(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Result<Option<f64>> {
        match self {
            Surface::Plane { point, normal } => {
                let denom = normal.dot(dir);
                if denom == 0.0 {
                    return Ok(None);
                }
                let s = normal.dot(&(point - origin)) / denom;
                Ok((s > 0.0).then_some(s))
            }
            Surface::Box { min, max } => {
                let (mut near, mut far) = (f64::NEG_INFINITY, f64::INFINITY);
                for i in 0..3 {
                    if dir[i] == 0.0 {
                        if origin[i] < min[i] || origin[i] > max[i] {
                            return Ok(None);
                        }
                        continue;
                    }
                    let a = (min[i] - origin[i]) / dir[i];
                    let b = (max[i] - origin[i]) / dir[i];
                    near = near.max(a.min(b));
                    far = far.min(a.max(b));
                }
                if near > far || far <= 0.0 {
                    return Ok(None);
                }
                if near <= 0.0 {
                    return Err(Error::InvalidScene("camera lies inside a box".into()));
                }
                Ok(Some(near))
            }
        }
    }
}

/// Band-limited solid texture: a normalized sum of 3D sinusoids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextureSpec {
    /// Reference spatial frequency in cycles per scene unit; components are
    /// drawn log-uniformly from two octaves below to half an octave above.
    pub frequency: f64,
    /// Amplitude around 0.5; values stay in `[0.5 − contrast, 0.5 + contrast]`.
    pub contrast: f64,
    pub components: usize,
    pub seed: u64,
}

impl Default for TextureSpec {
    fn default() -> Self {
        Self {
            frequency: 4.0,
            contrast: 0.4,
            components: 8,
            seed: 0,
        }
    }
}

struct Wave {
    k: Vector3<f64>,
    phase: Vec<f64>,
    amplitude: f64,
}

struct Texture {
    waves: Vec<Wave>,
    contrast: f64,
    norm: f64,
}

impl Texture {
    fn new(spec: &TextureSpec, channels: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let waves: Vec<Wave> = (0..spec.components.max(1))
            .map(|_| {
                let dir = loop {
                    let v = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                    let n = v.norm();
                    if n > 0.1 && n <= 1.0 {
                        break v / n;
                    }
                };
                let f = spec.frequency * 2f64.powf(rng.gen_range(-2.0..0.5));
                Wave {
                    k: dir * (std::f64::consts::TAU * f),
                    phase: (0..channels).map(|_| rng.gen_range(0.0..std::f64::consts::TAU)).collect(),
                    amplitude: rng.gen_range(0.5..1.0),
                }
            })
            .collect();
        let norm = waves.iter().map(|w| w.amplitude).sum();
        Self {
            waves,
            contrast: spec.contrast,
            norm,
        }
    }

    fn value(&self, x: &Vector3<f64>, channel: usize) -> f64 {
        let s: f64 = self
            .waves
            .iter()
            .map(|w| w.amplitude * (w.k.dot(x) + w.phase[channel]).sin())
            .sum();
        0.5 + self.contrast * s / self.norm
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub intrinsics: Intrinsics,
    pub surfaces: Vec<Surface>,
    pub texture: TextureSpec,
}

impl SceneSpec {
    /// Single surface seen by a camera with a ~60° horizontal field of view,
    /// textured at about 12 pixels per cycle where it crosses the optical axis.
    pub fn single(width: usize, height: usize, surface: Surface, seed: u64) -> Result<Self> {
        let f = 0.9 * width as f64;
        let axis_depth = surface
            .intersect(&Vector3::zeros(), &Vector3::z())?
            .ok_or_else(|| Error::InvalidScene("surface does not cross the optical axis".into()))?;
        Ok(Self {
            width,
            height,
            channels: 3,
            intrinsics: Intrinsics::new(f, f, (width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0)?,
            surfaces: vec![surface],
            texture: TextureSpec {
                frequency: f / (12.0 * axis_depth),
                seed,
                ..TextureSpec::default()
            },
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidScene("empty image".into()));
        }
        if self.channels != 1 && self.channels != 3 {
            return Err(Error::InvalidScene(format!("{} channels; expected 1 or 3", self.channels)));
        }
        if self.surfaces.is_empty() {
            return Err(Error::InvalidScene("no surfaces".into()));
        }
        if !(self.texture.contrast >= 0.0 && self.texture.contrast <= 0.5) {
            return Err(Error::InvalidScene("texture contrast must lie in [0, 0.5]".into()));
        }
        if !(self.texture.frequency > 0.0 && self.texture.frequency.is_finite()) {
            return Err(Error::InvalidScene("texture frequency must be positive".into()));
        }
        for s in &self.surfaces {
            match s {
                Surface::Plane { normal, .. } if !(normal.norm() > 0.0) => {
                    return Err(Error::InvalidScene("plane normal is zero".into()))
                }
                Surface::Box { min, max } if (0..3).any(|i| !(min[i] < max[i])) => {
                    return Err(Error::InvalidScene("box has an empty extent".into()))
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// Camera trajectory: `steps[t]` maps camera-`t` coordinates to camera-`t+1`
/// coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionSpec {
    pub steps: Vec<RigidPose>,
}

impl MotionSpec {
    pub fn new(steps: Vec<RigidPose>) -> Result<Self> {
        if steps.is_empty() {
            return Err(Error::InvalidScene("motion needs at least two frames".into()));
        }
        Ok(Self { steps })
    }

    /// `frames − 1` identical steps.
    pub fn constant(step: RigidPose, frames: usize) -> Result<Self> {
        Self::new(vec![step; frames.saturating_sub(1)])
    }

    pub fn frames(&self) -> usize {
        self.steps.len() + 1
    }
}

#[derive(Debug, Clone)]
pub struct RenderedScene {
    pub snippet: Snippet,
    pub depths: Vec<DepthMap>,
    pub poses: Vec<RigidPose>,
}

/// Ray-casts every frame of the trajectory. Depth is the z coordinate of the
/// nearest surface point in each camera's frame.
pub fn render_snippet(scene: &SceneSpec, motion: &MotionSpec) -> Result<RenderedScene> {
    scene.validate()?;
    if motion.steps.is_empty() {
        return Err(Error::InvalidScene("motion needs at least two frames".into()));
    }
    let texture = Texture::new(&scene.texture, scene.channels);
    let (w, h, ch) = (scene.width, scene.height, scene.channels);
    let k = scene.intrinsics;
    let mut frames = Vec::with_capacity(motion.frames());
    let mut depths = Vec::with_capacity(motion.frames());
    for t in 0..motion.frames() {
        // World (= first camera) to camera t.
        let world_to_cam = if t == 0 {
            RigidPose::identity()
        } else {
            compose_poses(&motion.steps[..t])?
        };
        let cam_to_world = world_to_cam.inverse();
        let r_cw = cam_to_world.rotation_matrix();
        let origin = cam_to_world.translation;
        let hits: Vec<Result<(f64, Vec<f64>)>> = (0..w * h)
            .into_par_iter()
            .map(|i| {
                let (x, y) = (i % w, i / w);
                let ray = k.ray(PixelCoord::new(x as f64, y as f64));
                let dir = r_cw * ray;
                let mut best: Option<f64> = None;
                for s in &scene.surfaces {
                    if let Some(d) = s.intersect(&origin, &dir)? {
                        best = Some(best.map_or(d, |b: f64| b.min(d)));
                    }
                }
                let depth = best.filter(|d| *d > Z_MIN).ok_or_else(|| {
                    Error::InvalidScene(format!("pixel ({x}, {y}) of frame {t} sees no surface in front of the camera"))
                })?;
                let p = origin + dir * depth;
                Ok((depth, (0..ch).map(|c| texture.value(&p, c)).collect()))
            })
            .collect();
        let mut depth = Vec::with_capacity(w * h);
        let mut data = Vec::with_capacity(w * h * ch);
        for hit in hits {
            let (d, px) = hit?;
            depth.push(d);
            data.extend(px);
        }
        frames.push(ImageGrid::new(w, h, ch, data)?);
        depths.push(DepthMap::from_values(w, h, depth)?);
    }
    Ok(RenderedScene {
        snippet: Snippet::new(frames, k)?,
        depths,
        poses: motion.steps.clone(),
    })
}

/// Seeded test problem for gradient checks: a randomly slanted, randomly
/// textured plane seen from `frames` cameras under a small random motion,
/// probed at perturbed poses and at smooth depth maps unrelated to the
/// plane. Each probed disparity map is a ramp along both axes with a faint
/// ripple, so neighboring disparities never coincide at any scale and the
/// smoothness term stays away from its kinks.
pub fn gradient_problem(width: usize, height: usize, frames: usize, seed: u64) -> Result<(Snippet, ParamVector)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let depth = rng.gen_range(3.0..6.0);
    let surface = Surface::slanted(depth, rng.gen_range(-0.6..0.6));
    let scene = SceneSpec::single(width, height, surface, rng.gen())?;
    let steps = (1..frames)
        .map(|_| {
            RigidPose::new(
                Vector3::from_fn(|_, _| rng.gen_range(-0.01..0.01)),
                Vector3::from_fn(|_, _| rng.gen_range(-0.05..0.05) * depth),
            )
        })
        .collect();
    let rendered = render_snippet(&scene, &MotionSpec::new(steps)?)?;
    let (cx, cy) = (width as f64 / 2.0, height as f64 / 2.0);
    let depths: Vec<DepthMap> = (0..frames)
        .map(|_| {
            let mut slope = || rng.gen_range(0.02..0.05) * if rng.gen() { 1.0 } else { -1.0 };
            let (gx, gy) = (slope(), slope());
            let (a, b) = (rng.gen_range(0.05..0.3), rng.gen_range(0.05..0.3));
            let (pa, pb) = (rng.gen_range(0.0..TAU), rng.gen_range(0.0..TAU));
            let base = depth * rng.gen_range(0.8..1.25);
            let v = (0..width * height)
                .map(|i| {
                    let (x, y) = ((i % width) as f64, (i / width) as f64);
                    let ripple = 0.02 * (a * x + pa).sin() * (b * y + pb).cos();
                    base * (-(gx * (x - cx) + gy * (y - cy) + ripple)).exp()
                })
                .collect();
            DepthMap::from_values(width, height, v)
        })
        .collect::<Result<_>>()?;
    let poses: Vec<RigidPose> = rendered
        .poses
        .iter()
        .map(|p| {
            let mut v = p.to_params();
            for (i, x) in v.iter_mut().enumerate() {
                *x += rng.gen_range(-0.02..0.02) * if i < 3 { 1.0 } else { depth };
            }
            RigidPose::from_params(&v)
        })
        .collect();
    Ok((rendered.snippet, ParamVector::from_depths(&depths, &poses)?))
}

/// Rectangle that moves independently of the scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MovingPatch {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
    /// Displacement per frame in pixels.
    pub dx: i64,
    pub dy: i64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Corruption {
    pub patch: Option<MovingPatch>,
    /// Added to every pixel of the corresponding frame, then clamped to `[0, 1]`.
    pub brightness: Vec<f64>,
    /// Upper bound on patch area as a fraction of the image.
    pub max_fraction: f64,
}

#[derive(Debug, Clone)]
pub struct CorruptedSnippet {
    pub snippet: Snippet,
    /// Per frame, `true` where the moving patch covers the pixel.
    pub masks: Vec<ValidityMask>,
}

impl CorruptedSnippet {
    /// Per frame, `true` where the pixel is untouched by the patch.
    pub fn static_masks(&self) -> Vec<ValidityMask> {
        self.masks
            .iter()
            .map(|m| {
                ValidityMask::new(m.width(), m.height(), m.flags().iter().map(|f| !f).collect())
                    .expect("same dimensions")
            })
            .collect()
    }
}

/// Pastes a textured patch displaced by `t·(dx, dy)` into frame `t` and adds
/// per-frame brightness offsets.
pub fn apply_corruption(snippet: &Snippet, c: &Corruption) -> Result<CorruptedSnippet> {
    let (w, h, ch) = (snippet.width(), snippet.height(), snippet.channels());
    let n = snippet.len();
    if c.brightness.len() > n {
        return Err(Error::invalid(format!(
            "{} brightness offsets for {n} frames",
            c.brightness.len()
        )));
    }
    let mut frames: Vec<ImageGrid> = snippet.frames().to_vec();
    let mut masks = vec![vec![false; w * h]; n];
    if let Some(p) = &c.patch {
        let area = (p.width * p.height) as f64 / (w * h) as f64;
        if area > c.max_fraction {
            return Err(Error::invalid(format!(
                "patch covers {area:.4} of the image, above the bound {}",
                c.max_fraction
            )));
        }
        let tex = Texture::new(
            &TextureSpec {
                frequency: 1.0 / 12.0,
                seed: p.seed,
                ..TextureSpec::default()
            },
            ch,
        );
        for (t, frame) in frames.iter_mut().enumerate() {
            let x0 = p.x as i64 + p.dx * t as i64;
            let y0 = p.y as i64 + p.dy * t as i64;
            if x0 < 0 || y0 < 0 || x0 as usize + p.width > w || y0 as usize + p.height > h {
                return Err(Error::invalid(format!("moving patch leaves the image in frame {t}")));
            }
            let (x0, y0) = (x0 as usize, y0 as usize);
            let mut data = frame.data().to_vec();
            for py in 0..p.height {
                for px in 0..p.width {
                    let i = (y0 + py) * w + x0 + px;
                    let local = Vector3::new(px as f64, py as f64, 0.0);
                    for k in 0..ch {
                        data[i * ch + k] = tex.value(&local, k);
                    }
                    masks[t][i] = true;
                }
            }
            *frame = ImageGrid::new(w, h, ch, data)?;
        }
    }
    for (frame, &b) in frames.iter_mut().zip(&c.brightness) {
        if b != 0.0 {
            let data = frame.data().iter().map(|v| (v + b).clamp(0.0, 1.0)).collect();
            *frame = ImageGrid::new(w, h, ch, data)?;
        }
    }
    Ok(CorruptedSnippet {
        snippet: Snippet::new(frames, *snippet.intrinsics())?,
        masks: masks
            .into_iter()
            .map(|m| ValidityMask::new(w, h, m))
            .collect::<Result<_>>()?,
    })
}
