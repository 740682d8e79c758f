//! Snippets, frame-pair enumeration for both traversal directions, and scale sets.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image_geometry::{compose_poses, ImageGrid, Intrinsics, RigidPose};

/// Ordered frames sharing one camera.
#[derive(Debug, Clone, PartialEq)]
pub struct Snippet {
    frames: Vec<ImageGrid>,
    intrinsics: Intrinsics,
}

impl Snippet {
    pub fn new(frames: Vec<ImageGrid>, intrinsics: Intrinsics) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| Error::invalid("snippet needs at least one frame"))?;
        let (dims, ch) = (first.dims(), first.channels());
        for (i, f) in frames.iter().enumerate() {
            if f.dims() != dims || f.channels() != ch {
                return Err(Error::invalid(format!(
                    "frame {i} is {:?}x{} but frame 0 is {dims:?}x{ch}",
                    f.dims(),
                    f.channels()
                )));
            }
        }
        Ok(Self { frames, intrinsics })
    }

    pub fn frames(&self) -> &[ImageGrid] {
        &self.frames
    }

    pub fn intrinsics(&self) -> &Intrinsics {
        &self.intrinsics
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn width(&self) -> usize {
        self.frames[0].width()
    }

    pub fn height(&self) -> usize {
        self.frames[0].height()
    }

    pub fn channels(&self) -> usize {
        self.frames[0].channels()
    }

    /// The same snippet with frame order reversed.
    pub fn reversed(&self) -> Snippet {
        Snippet {
            frames: self.frames.iter().rev().cloned().collect(),
            intrinsics: self.intrinsics,
        }
    }

    pub fn map_frames(&self, f: impl Fn(&ImageGrid) -> ImageGrid) -> Result<Snippet> {
        Snippet::new(self.frames.iter().map(f).collect(), self.intrinsics)
    }
}

/// Consecutive poses of a reversed snippet: inverted and in reverse order.
pub fn reverse_poses(poses: &[RigidPose]) -> Vec<RigidPose> {
    poses.iter().rev().map(RigidPose::inverse).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    Forward,
    Backward,
}

impl Direction {
    pub const BOTH: [Direction; 2] = [Direction::Forward, Direction::Backward];
}

/// One consecutive pose applied either as stored or inverted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChainStep {
    pub pose: usize,
    pub inverted: bool,
}

/// A source frame, the frame it is warped into, and the pose chain between them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FramePair {
    pub source: usize,
    pub target: usize,
    pub chain: Vec<ChainStep>,
}

impl FramePair {
    /// Composed source→target pose.
    pub fn pose(&self, poses: &[RigidPose]) -> Result<RigidPose> {
        let steps: Vec<RigidPose> = self
            .chain
            .iter()
            .map(|s| {
                if s.inverted {
                    poses[s.pose].inverse()
                } else {
                    poses[s.pose]
                }
            })
            .collect();
        compose_poses(&steps)
    }
}

/// Index of frame `i` of the traversal in the stored frame order.
fn frame_index(n_frames: usize, dir: Direction, i: usize) -> usize {
    match dir {
        Direction::Forward => i,
        Direction::Backward => n_frames - 1 - i,
    }
}

/// Pair `(i, i + offset)` of the traversal, mapped back to stored frames.
fn traversal_pair(n_frames: usize, dir: Direction, i: usize, offset: usize) -> FramePair {
    let source = frame_index(n_frames, dir, i);
    let target = frame_index(n_frames, dir, i + offset);
    let chain = (0..offset)
        .map(|k| match dir {
            Direction::Forward => ChainStep {
                pose: source + k,
                inverted: false,
            },
            Direction::Backward => ChainStep {
                pose: source - 1 - k,
                inverted: true,
            },
        })
        .collect();
    FramePair {
        source,
        target,
        chain,
    }
}

/// Consecutive pairs `(t, t+1)` of the traversal, used by the reconstruction term.
pub fn reconstruction_pairs(n_frames: usize, dir: Direction) -> Vec<FramePair> {
    (0..n_frames.saturating_sub(1))
        .map(|i| traversal_pair(n_frames, dir, i, 1))
        .collect()
}

/// All pairs `(t, t+n)`, `n ≥ 1`, of the traversal, used by the depth-consistency term.
pub fn consistency_pairs(n_frames: usize, dir: Direction) -> Vec<FramePair> {
    let mut out = Vec::new();
    for i in 0..n_frames.saturating_sub(1) {
        for offset in 1..n_frames - i {
            out.push(traversal_pair(n_frames, dir, i, offset));
        }
    }
    out
}

/// Which pyramid levels contribute to the objective. Level `s` (1-based) is
/// weighted by `1 / 2^(s−1)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScaleSet {
    enabled: Vec<bool>,
}

impl ScaleSet {
    pub fn all(levels: usize) -> Self {
        Self {
            enabled: vec![true; levels],
        }
    }

    /// Only level `scale` (1-based) enabled.
    pub fn only(levels: usize, scale: usize) -> Self {
        Self {
            enabled: (1..=levels).map(|s| s == scale).collect(),
        }
    }

    /// The `count` coarsest levels enabled.
    pub fn coarsest(levels: usize, count: usize) -> Self {
        Self {
            enabled: (1..=levels).map(|s| s + count > levels).collect(),
        }
    }

    pub fn levels(&self) -> usize {
        self.enabled.len()
    }

    pub fn is_enabled(&self, scale: usize) -> bool {
        self.enabled[scale - 1]
    }

    pub fn weight(scale: usize) -> f64 {
        1.0 / (1u64 << (scale - 1)) as f64
    }

    pub fn validate(&self, width: usize, height: usize) -> Result<()> {
        if self.enabled.is_empty() {
            return Err(Error::invalid("at least one scale level is required"));
        }
        let need = 1usize << (self.levels() - 1);
        if width < need || height < need {
            return Err(Error::invalid(format!(
                "{width}x{height} image is too small for {} scale levels",
                self.levels()
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forward_pairs_for_three_frames() {
        let re = reconstruction_pairs(3, Direction::Forward);
        assert_eq!(
            re.iter().map(|p| (p.source, p.target)).collect::<Vec<_>>(),
            vec![(0, 1), (1, 2)]
        );
        let dc = consistency_pairs(3, Direction::Forward);
        assert_eq!(
            dc.iter().map(|p| (p.source, p.target)).collect::<Vec<_>>(),
            vec![(0, 1), (0, 2), (1, 2)]
        );
        assert_eq!(dc[1].chain.len(), 2);
    }

    #[test]
    fn backward_pairs_mirror_forward() {
        let dc = consistency_pairs(3, Direction::Backward);
        assert_eq!(
            dc.iter().map(|p| (p.source, p.target)).collect::<Vec<_>>(),
            vec![(2, 1), (2, 0), (1, 0)]
        );
        assert_eq!(
            dc[1].chain,
            vec![
                ChainStep { pose: 1, inverted: true },
                ChainStep { pose: 0, inverted: true }
            ]
        );
    }

    #[test]
    fn two_frames_have_one_consistency_pair() {
        assert_eq!(consistency_pairs(2, Direction::Forward).len(), 1);
        assert_eq!(consistency_pairs(2, Direction::Backward).len(), 1);
    }

    #[test]
    fn scale_weights() {
        let w: Vec<f64> = (1..=4).map(ScaleSet::weight).collect();
        assert_eq!(w, vec![1.0, 0.5, 0.25, 0.125]);
        let c = ScaleSet::coarsest(4, 2);
        assert_eq!((1..=4).map(|s| c.is_enabled(s)).collect::<Vec<_>>(), vec![false, false, true, true]);
        assert!(ScaleSet::all(4).validate(7, 8).is_err());
        assert!(ScaleSet::all(4).validate(8, 8).is_ok());
    }

    #[test]
    fn backward_pose_is_inverse_of_forward() {
        use nalgebra::Vector3;
        let poses = vec![
            RigidPose::new(Vector3::new(0.1, 0.0, 0.0), Vector3::new(0.0, 0.2, 0.0)),
            RigidPose::new(Vector3::new(0.0, -0.1, 0.05), Vector3::new(0.3, 0.0, 0.1)),
        ];
        let f = consistency_pairs(3, Direction::Forward)[1].pose(&poses).unwrap();
        let b = consistency_pairs(3, Direction::Backward)[1].pose(&poses).unwrap();
        let id = f.then(&b);
        assert!(id.angle() < 1e-12 && id.translation.norm() < 1e-12);
    }
}
