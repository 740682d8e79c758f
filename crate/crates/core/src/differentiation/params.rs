use std::ops::Range;

use crate::error::{Error, Result};
use crate::image_geometry::{DepthMap, RigidPose};

/// Flat layout: `frames` row-major disparity maps, then six pose parameters
/// `[ωx, ωy, ωz, tx, ty, tz]` for each consecutive frame pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamLayout {
    pub frames: usize,
    pub width: usize,
    pub height: usize,
}

/// What a flat parameter index refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamClass {
    Disparity { frame: usize, x: usize, y: usize },
    Rotation { pose: usize, axis: usize },
    Translation { pose: usize, axis: usize },
}

impl ParamLayout {
    pub fn new(frames: usize, width: usize, height: usize) -> Self {
        Self {
            frames,
            width,
            height,
        }
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn poses(&self) -> usize {
        self.frames.saturating_sub(1)
    }

    pub fn len(&self) -> usize {
        self.frames * self.pixels() + 6 * self.poses()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn disparity_range(&self, frame: usize) -> Range<usize> {
        let n = self.pixels();
        frame * n..(frame + 1) * n
    }

    pub fn pose_range(&self, pose: usize) -> Range<usize> {
        let start = self.frames * self.pixels() + 6 * pose;
        start..start + 6
    }

    pub fn classify(&self, index: usize) -> ParamClass {
        let disp = self.frames * self.pixels();
        if index < disp {
            let frame = index / self.pixels();
            let i = index % self.pixels();
            ParamClass::Disparity {
                frame,
                x: i % self.width,
                y: i / self.width,
            }
        } else {
            let k = index - disp;
            let (pose, j) = (k / 6, k % 6);
            if j < 3 {
                ParamClass::Rotation { pose, axis: j }
            } else {
                ParamClass::Translation { pose, axis: j - 3 }
            }
        }
    }
}

/// Optimization variables in [`ParamLayout`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    layout: ParamLayout,
    values: Vec<f64>,
}

impl ParamVector {
    pub fn new(layout: ParamLayout, values: Vec<f64>) -> Result<Self> {
        if values.len() != layout.len() {
            return Err(Error::invalid(format!(
                "parameter vector has {} entries, layout needs {}",
                values.len(),
                layout.len()
            )));
        }
        Ok(Self { layout, values })
    }

    /// Packs per-frame disparity maps and consecutive poses. Every disparity
    /// must be valid.
    pub fn from_parts(disparities: &[DepthMap], poses: &[RigidPose]) -> Result<Self> {
        let first = disparities
            .first()
            .ok_or_else(|| Error::invalid("no disparity maps"))?;
        let layout = ParamLayout::new(disparities.len(), first.width(), first.height());
        if poses.len() != layout.poses() {
            return Err(Error::invalid(format!(
                "{} frames need {} poses, got {}",
                layout.frames,
                layout.poses(),
                poses.len()
            )));
        }
        let mut values = Vec::with_capacity(layout.len());
        for (i, d) in disparities.iter().enumerate() {
            if d.dims() != (layout.width, layout.height) {
                return Err(Error::invalid(format!("disparity map {i} has mismatched dimensions")));
            }
            if d.valid_count() != layout.pixels() {
                return Err(Error::invalid(format!("disparity map {i} has invalid entries")));
            }
            values.extend_from_slice(d.values());
        }
        for p in poses {
            values.extend_from_slice(&p.to_params());
        }
        Ok(Self { layout, values })
    }

    /// Packs depth maps (converted to disparity) and poses.
    pub fn from_depths(depths: &[DepthMap], poses: &[RigidPose]) -> Result<Self> {
        let disp: Vec<DepthMap> = depths.iter().map(DepthMap::reciprocal).collect();
        Self::from_parts(&disp, poses)
    }

    pub fn layout(&self) -> ParamLayout {
        self.layout
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn disparity(&self, frame: usize) -> &[f64] {
        &self.values[self.layout.disparity_range(frame)]
    }

    pub fn pose(&self, k: usize) -> RigidPose {
        RigidPose::from_params(&self.values[self.layout.pose_range(k)])
    }

    pub fn poses(&self) -> Vec<RigidPose> {
        (0..self.layout.poses()).map(|k| self.pose(k)).collect()
    }

    pub fn disparity_maps(&self) -> Result<Vec<DepthMap>> {
        (0..self.layout.frames)
            .map(|f| DepthMap::from_values(self.layout.width, self.layout.height, self.disparity(f).to_vec()))
            .collect()
    }

    pub fn depth_maps(&self) -> Result<Vec<DepthMap>> {
        Ok(self.disparity_maps()?.iter().map(DepthMap::reciprocal).collect())
    }
}

/// Partial derivatives of the objective in [`ParamLayout`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientVector {
    layout: ParamLayout,
    values: Vec<f64>,
}

impl GradientVector {
    pub fn zeros(layout: ParamLayout) -> Self {
        Self {
            layout,
            values: vec![0.0; layout.len()],
        }
    }

    pub fn from_values(layout: ParamLayout, values: Vec<f64>) -> Result<Self> {
        ParamVector::new(layout, values).map(|p| Self {
            layout,
            values: p.values,
        })
    }

    pub fn layout(&self) -> ParamLayout {
        self.layout
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn disparity(&self, frame: usize) -> &[f64] {
        &self.values[self.layout.disparity_range(frame)]
    }

    pub fn pose(&self, k: usize) -> &[f64] {
        &self.values[self.layout.pose_range(k)]
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}
