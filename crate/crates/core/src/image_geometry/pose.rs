use nalgebra::{Matrix3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Angles below this use the series expansions of the Rodrigues terms.
const SMALL_ANGLE: f64 = 1e-3;

/// Rigid transform `X ↦ R(ω)·X + t` with `ω` an axis-angle vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidPose {
    pub rotation: Vector3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for RigidPose {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidPose {
    pub fn identity() -> Self {
        Self {
            rotation: Vector3::zeros(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Vector3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self::new(Vector3::zeros(), t)
    }

    pub fn from_rotation(omega: Vector3<f64>) -> Self {
        Self::new(omega, Vector3::zeros())
    }

    /// `[ωx, ωy, ωz, tx, ty, tz]`
    pub fn from_params(p: &[f64]) -> Self {
        Self::new(
            Vector3::new(p[0], p[1], p[2]),
            Vector3::new(p[3], p[4], p[5]),
        )
    }

    pub fn to_params(&self) -> [f64; 6] {
        let (w, t) = (self.rotation, self.translation);
        [w.x, w.y, w.z, t.x, t.y, t.z]
    }

    /// Builds a pose from a rotation matrix, normalizing the axis-angle so the
    /// angle lies in `[0, π]`.
    pub fn from_matrix(r: &Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self::new(log_so3(r), translation)
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        exp_so3(&self.rotation)
    }

    pub fn angle(&self) -> f64 {
        self.rotation.norm()
    }

    pub fn transform_point(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.rotation_matrix() * x + self.translation
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation_matrix().transpose();
        Self::new(-self.rotation, -(rt * self.translation))
    }

    /// Pose applying `self` first and `next` second: `next ∘ self`.
    pub fn then(&self, next: &RigidPose) -> Self {
        let r1 = self.rotation_matrix();
        let r2 = next.rotation_matrix();
        Self::from_matrix(&(r2 * r1), r2 * self.translation + next.translation)
    }

    pub fn is_finite(&self) -> bool {
        self.rotation.iter().chain(self.translation.iter()).all(|v| v.is_finite())
    }
}

/// Applies a pose to a point.
pub fn transform_point(x: &Vector3<f64>, pose: &RigidPose) -> Vector3<f64> {
    pose.transform_point(x)
}

/// Composes a chain left to right: the first pose is applied first, so
/// `[T(t→t+1), T(t+1→t+2)]` yields `T(t→t+2)`.
pub fn compose_poses(chain: &[RigidPose]) -> Result<RigidPose> {
    let (first, rest) = chain
        .split_first()
        .ok_or_else(|| Error::invalid("cannot compose an empty pose chain"))?;
    Ok(rest.iter().fold(*first, |acc, p| acc.then(p)))
}

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rodrigues' formula.
pub fn exp_so3(omega: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = omega.norm_squared();
    let theta = theta2.sqrt();
    let k = skew(omega);
    let (a, b) = if theta < SMALL_ANGLE {
        let theta4 = theta2 * theta2;
        (
            1.0 - theta2 / 6.0 + theta4 / 120.0,
            0.5 - theta2 / 24.0 + theta4 / 720.0,
        )
    } else {
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    Matrix3::identity() + k * a + k * k * b
}

/// Inverse of [`exp_so3`], returning an axis-angle vector with angle in `[0, π]`.
pub fn log_so3(r: &Matrix3<f64>) -> Vector3<f64> {
    let q = UnitQuaternion::from_matrix(r);
    let (mut w, mut v) = (q.w, q.imag());
    if w < 0.0 {
        w = -w;
        v = -v;
    }
    let s = v.norm();
    if s < 1e-12 {
        // sin(θ/2) ≈ θ/2
        return v * 2.0 / w;
    }
    let theta = 2.0 * s.atan2(w);
    v * (theta / s)
}

/// Right Jacobian of SO(3): `exp(ω + δ) ≈ exp(ω)·exp(J_r(ω)·δ)`.
///
/// With it, `∂(R(ω)·v)/∂ω = −R(ω)·[v]×·J_r(ω)`.
pub fn right_jacobian(omega: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = omega.norm_squared();
    let theta = theta2.sqrt();
    let k = skew(omega);
    let (a, b) = if theta < SMALL_ANGLE {
        let theta4 = theta2 * theta2;
        (
            0.5 - theta2 / 24.0 + theta4 / 720.0,
            1.0 / 6.0 - theta2 / 120.0 + theta4 / 5040.0,
        )
    } else {
        (
            (1.0 - theta.cos()) / theta2,
            (theta - theta.sin()) / (theta2 * theta),
        )
    };
    Matrix3::identity() - k * a + k * k * b
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn close(a: &Vector3<f64>, b: &Vector3<f64>, tol: f64) -> bool {
        (a - b).norm() < tol
    }

    #[test]
    fn identity_leaves_points() {
        let x = Vector3::new(1.0, 2.0, 3.0);
        assert_eq!(transform_point(&x, &RigidPose::identity()), x);
    }

    #[test]
    fn pure_translation() {
        let p = RigidPose::from_translation(Vector3::new(0.0, 0.0, 1.0));
        assert_eq!(transform_point(&Vector3::new(0.0, 0.0, 1.0), &p), Vector3::new(0.0, 0.0, 2.0));
    }

    #[test]
    fn quarter_turn_about_z() {
        let p = RigidPose::from_rotation(Vector3::new(0.0, 0.0, FRAC_PI_2));
        let y = transform_point(&Vector3::new(1.0, 0.0, 0.0), &p);
        assert!(close(&y, &Vector3::new(0.0, 1.0, 0.0), 1e-15));
    }

    #[test]
    fn compose_identity_chain() {
        let c = compose_poses(&[RigidPose::identity(); 4]).unwrap();
        assert_eq!(c, RigidPose::identity());
    }

    #[test]
    fn compose_translations_add() {
        let a = RigidPose::from_translation(Vector3::new(1.0, 0.0, 0.0));
        let b = RigidPose::from_translation(Vector3::new(2.0, 0.0, 0.0));
        let c = compose_poses(&[a, b]).unwrap();
        assert!(close(&c.translation, &Vector3::new(3.0, 0.0, 0.0), 1e-15));
        assert!(c.angle() < 1e-15);
    }

    #[test]
    fn compose_two_quarter_turns_is_half_turn() {
        let q = RigidPose::from_rotation(Vector3::new(0.0, 0.0, FRAC_PI_2));
        let c = compose_poses(&[q, q]).unwrap();
        // Matrix-product oracle: Rz(π/2)² maps e1 → −e1, e2 → −e2, e3 → e3.
        let r = q.rotation_matrix() * q.rotation_matrix();
        for e in [Vector3::x(), Vector3::y(), Vector3::z()] {
            assert!(close(&c.transform_point(&e), &(r * e), 1e-12));
        }
        assert!(close(&c.transform_point(&Vector3::x()), &-Vector3::x(), 1e-12));
        assert!((c.angle() - PI).abs() < 1e-12);
    }

    #[test]
    fn empty_chain_is_error() {
        assert!(matches!(compose_poses(&[]), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let omega = Vector3::new(0.3, -0.7, 0.4);
        let v = Vector3::new(0.5, 1.5, -2.0);
        let analytic = -exp_so3(&omega) * skew(&v) * right_jacobian(&omega);
        let h = 1e-6;
        for j in 0..3 {
            let mut e = Vector3::zeros();
            e[j] = h;
            let fd = (exp_so3(&(omega + e)) * v - exp_so3(&(omega - e)) * v) / (2.0 * h);
            for i in 0..3 {
                assert!((fd[i] - analytic[(i, j)]).abs() < 1e-8, "{i},{j}");
            }
        }
    }

    #[test]
    fn jacobian_small_angle_branch_is_continuous() {
        let v = Vector3::new(1.0, 2.0, 3.0);
        let below = v * (SMALL_ANGLE * (1.0 - 1e-9) / v.norm());
        let above = v * (SMALL_ANGLE * (1.0 + 1e-9) / v.norm());
        assert!((right_jacobian(&below) - right_jacobian(&above)).norm() < 1e-10);
        assert!((exp_so3(&below) - exp_so3(&above)).norm() < 1e-10);
    }

    #[test]
    fn log_near_pi_is_stable() {
        let omega = Vector3::new(0.0, PI - 1e-9, 0.0);
        let back = log_so3(&exp_so3(&omega));
        assert!((exp_so3(&back) - exp_so3(&omega)).norm() < 1e-12);
        assert!(back.norm() <= PI + 1e-12);
    }

    fn arb_pose() -> impl Strategy<Value = RigidPose> {
        (prop::array::uniform3(-2.0..2.0f64), prop::array::uniform3(-5.0..5.0f64))
            .prop_map(|(w, t)| RigidPose::new(Vector3::from(w), Vector3::from(t)))
    }

    proptest! {
        #[test]
        fn pose_inverse_roundtrips_points(p in arb_pose(), x in prop::array::uniform3(-10.0..10.0f64)) {
            let x = Vector3::from(x);
            let c = compose_poses(&[p, p.inverse()]).unwrap();
            prop_assert!(close(&c.transform_point(&x), &x, 1e-10));
            prop_assert!(c.angle() < 1e-12);
            prop_assert!(c.translation.norm() < 1e-12);
        }

        #[test]
        fn rotation_is_orthonormal(p in arb_pose()) {
            let r = p.rotation_matrix();
            prop_assert!((r.transpose() * r - Matrix3::identity()).norm() < 1e-12);
            prop_assert!((r.determinant() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn composition_is_associative(a in arb_pose(), b in arb_pose(), c in arb_pose(),
                                      x in prop::array::uniform3(-10.0..10.0f64)) {
            let x = Vector3::from(x);
            let left = a.then(&b).then(&c);
            let right = a.then(&b.then(&c));
            prop_assert!(close(&left.transform_point(&x), &right.transform_point(&x), 1e-10));
        }

        #[test]
        fn composed_angle_in_range(a in arb_pose(), b in arb_pose()) {
            let c = a.then(&b);
            prop_assert!(c.angle() <= PI + 1e-12);
        }
    }
}
