//! Rotation and quaternion primitives.
//!
//! Vectors and matrices are `nalgebra` types; quaternions are a small
//! scalar-first type of our own so the Hamilton product, inverse and the
//! canonical `w >= 0` hemisphere stay explicit.

use std::ops::{Mul, Neg};
use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Cross-product norm below which two directions count as (anti)parallel.
pub const PARALLEL_EPS: f64 = 1e-2;

static DEGENERATE_ROTATIONS: AtomicU64 = AtomicU64::new(0);

/// Number of times [`rotation_between`] fell back to the identity branch
/// in this process.
pub fn degenerate_rotation_count() -> u64 {
    DEGENERATE_ROTATIONS.load(Ordering::Relaxed)
}

/// Rotation taking the direction of `v1` onto the direction of `v2`.
///
/// Normalizes both vectors, takes `k = v1 x v2` and `theta = acos(v1 . v2)`,
/// and returns the Rodrigues matrix `I + sin(theta) K + (1 - cos(theta)) K^2`.
/// When `|k| < 1e-2` the identity is returned, including for antiparallel
/// inputs.
pub fn rotation_between(v1: &Vec3, v2: &Vec3) -> Result<Mat3> {
    rotation_between_flagged(v1, v2).map(|(r, _)| r)
}

/// Same as [`rotation_between`], also reporting whether the identity
/// branch fired.
pub fn rotation_between_flagged(v1: &Vec3, v2: &Vec3) -> Result<(Mat3, bool)> {
    let n1 = v1.norm();
    let n2 = v2.norm();
    if !(n1 > 0.0 && n2 > 0.0) || !n1.is_finite() || !n2.is_finite() {
        return Err(Error::Domain(format!(
            "rotation_between needs finite non-zero vectors, got norms {n1} and {n2}"
        )));
    }
    let a = v1 / n1;
    let b = v2 / n2;
    let k = a.cross(&b);
    let theta = a.dot(&b).clamp(-1.0, 1.0).acos();
    let k_norm = k.norm();
    if k_norm < PARALLEL_EPS {
        DEGENERATE_ROTATIONS.fetch_add(1, Ordering::Relaxed);
        return Ok((Mat3::identity(), true));
    }
    let kh = k / k_norm;
    let skew = skew(&kh);
    let r = Mat3::identity() + skew * theta.sin() + skew * skew * (1.0 - theta.cos());
    Ok((r, false))
}

/// Cross-product matrix: `skew(a) * b == a x b`.
pub fn skew(a: &Vec3) -> Mat3 {
    Mat3::new(0.0, -a.z, a.y, a.z, 0.0, -a.x, -a.y, a.x, 0.0)
}

/// Rotation by `angle` about the unit `axis`.
pub fn axis_angle(axis: &Vec3, angle: f64) -> Mat3 {
    let k = skew(axis);
    Mat3::identity() + k * angle.sin() + k * k * (1.0 - angle.cos())
}

pub fn rot_z(angle: f64) -> Mat3 {
    axis_angle(&Vec3::z(), angle)
}

/// Checks orthonormality and `det = +1` within `tol`.
pub fn is_rotation(m: &Mat3, tol: f64) -> bool {
    if m.iter().any(|v| !v.is_finite()) {
        return false;
    }
    let gram = m.transpose() * m - Mat3::identity();
    gram.iter().all(|v| v.abs() <= tol) && (m.determinant() - 1.0).abs() <= tol
}

/// Unit quaternion, scalar first, Hamilton convention.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quat {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Quat {
    pub const IDENTITY: Quat = Quat {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub const fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Quat { w, x, y, z }
    }

    pub fn from_axis_angle(axis: &Vec3, angle: f64) -> Self {
        let a = axis.normalize();
        let (s, c) = (angle / 2.0).sin_cos();
        Quat::new(c, a.x * s, a.y * s, a.z * s)
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Quat::new(a[0], a[1], a[2], a[3])
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn dot(&self, other: &Quat) -> f64 {
        self.w * other.w + self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn normalize(&self) -> Quat {
        let n = self.norm();
        Quat::new(self.w / n, self.x / n, self.y / n, self.z / n)
    }

    pub fn conjugate(&self) -> Quat {
        Quat::new(self.w, -self.x, -self.y, -self.z)
    }

    /// Flip into the `w >= 0` hemisphere.
    pub fn canonical(self) -> Quat {
        if self.w < 0.0 {
            -self
        } else {
            self
        }
    }

    pub fn is_unit(&self, tol: f64) -> bool {
        self.norm().is_finite() && (self.norm() - 1.0).abs() <= tol
    }

    pub fn vector(&self) -> Vec3 {
        Vec3::new(self.x, self.y, self.z)
    }

    pub fn to_matrix(&self) -> Mat3 {
        let Quat { w, x, y, z } = *self;
        Mat3::new(
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        )
    }
}

impl Mul for Quat {
    type Output = Quat;

    fn mul(self, b: Quat) -> Quat {
        quat_mul(&self, &b)
    }
}

impl Neg for Quat {
    type Output = Quat;

    fn neg(self) -> Quat {
        Quat::new(-self.w, -self.x, -self.y, -self.z)
    }
}

pub fn quat_mul(a: &Quat, b: &Quat) -> Quat {
    Quat::new(
        a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
        a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
        a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
        a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
    )
}

/// Inverse of a quaternion; the conjugate for unit inputs.
pub fn quat_inv(q: &Quat) -> Quat {
    let n2 = q.dot(q);
    let c = q.conjugate();
    Quat::new(c.w / n2, c.x / n2, c.y / n2, c.z / n2)
}

/// Rotates `v` by `q` (`q v q*`).
pub fn quat_rotate(q: &Quat, v: &Vec3) -> Vec3 {
    let u = q.vector();
    let t = 2.0 * u.cross(v);
    v + q.w * t + u.cross(&t)
}

/// Converts a rotation matrix into a unit quaternion with `w >= 0`.
pub fn mat_to_quat(m: &Mat3) -> Result<Quat> {
    if !is_rotation(m, 1e-6) {
        return Err(Error::Domain(format!("not a rotation matrix: {m}")));
    }
    let trace = m.trace();
    let q = if trace > 0.0 {
        let s = (trace + 1.0).sqrt() * 2.0;
        Quat::new(
            0.25 * s,
            (m[(2, 1)] - m[(1, 2)]) / s,
            (m[(0, 2)] - m[(2, 0)]) / s,
            (m[(1, 0)] - m[(0, 1)]) / s,
        )
    } else if m[(0, 0)] > m[(1, 1)] && m[(0, 0)] > m[(2, 2)] {
        let s = (1.0 + m[(0, 0)] - m[(1, 1)] - m[(2, 2)]).sqrt() * 2.0;
        Quat::new(
            (m[(2, 1)] - m[(1, 2)]) / s,
            0.25 * s,
            (m[(0, 1)] + m[(1, 0)]) / s,
            (m[(0, 2)] + m[(2, 0)]) / s,
        )
    } else if m[(1, 1)] > m[(2, 2)] {
        let s = (1.0 + m[(1, 1)] - m[(0, 0)] - m[(2, 2)]).sqrt() * 2.0;
        Quat::new(
            (m[(0, 2)] - m[(2, 0)]) / s,
            (m[(0, 1)] + m[(1, 0)]) / s,
            0.25 * s,
            (m[(1, 2)] + m[(2, 1)]) / s,
        )
    } else {
        let s = (1.0 + m[(2, 2)] - m[(0, 0)] - m[(1, 1)]).sqrt() * 2.0;
        Quat::new(
            (m[(1, 0)] - m[(0, 1)]) / s,
            (m[(0, 2)] + m[(2, 0)]) / s,
            (m[(1, 2)] + m[(2, 1)]) / s,
            0.25 * s,
        )
    };
    Ok(q.normalize().canonical())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_2, PI};

    fn vec3() -> impl Strategy<Value = Vec3> {
        (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64)
            .prop_map(|(x, y, z)| Vec3::new(x, y, z))
            .prop_filter("non-zero", |v| v.norm() > 1e-3)
    }

    fn unit_quat() -> impl Strategy<Value = Quat> {
        (vec3(), -PI..PI).prop_map(|(a, t)| Quat::from_axis_angle(&a, t))
    }

    #[test]
    fn parallel_vectors_give_identity() {
        let r = rotation_between(&Vec3::x(), &Vec3::x()).unwrap();
        assert_eq!(r, Mat3::identity());
    }

    #[test]
    fn quarter_turn_about_z() {
        let r = rotation_between(&Vec3::x(), &Vec3::y()).unwrap();
        let expected = Mat3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        assert_relative_eq!(r, expected, epsilon = 1e-15);
    }

    #[test]
    fn antiparallel_takes_identity_branch() {
        let before = degenerate_rotation_count();
        let (r, degenerate) = rotation_between_flagged(&Vec3::x(), &-Vec3::x()).unwrap();
        assert!(degenerate);
        assert_eq!(r, Mat3::identity());
        assert!(degenerate_rotation_count() > before);
    }

    #[test]
    fn zero_vector_is_domain_error() {
        assert!(matches!(
            rotation_between(&Vec3::zeros(), &Vec3::x()),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn mat_to_quat_examples() {
        assert_eq!(mat_to_quat(&Mat3::identity()).unwrap(), Quat::IDENTITY);
        let q = mat_to_quat(&rot_z(FRAC_PI_2)).unwrap();
        assert_relative_eq!(q.w, FRAC_1_SQRT_2, epsilon = 1e-15);
        assert_relative_eq!(q.z, FRAC_1_SQRT_2, epsilon = 1e-15);
        assert_relative_eq!(q.x.abs() + q.y.abs(), 0.0, epsilon = 1e-15);
        let q = mat_to_quat(&axis_angle(&Vec3::x(), PI)).unwrap();
        assert_relative_eq!(q.x, 1.0, epsilon = 1e-15);
        assert_relative_eq!(q.w.abs() + q.y.abs() + q.z.abs(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn mat_to_quat_rejects_non_rotation() {
        let m = Mat3::identity() * 2.0;
        assert!(matches!(mat_to_quat(&m), Err(Error::Domain(_))));
        let reflect = Mat3::new(-1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(mat_to_quat(&reflect).is_err());
    }

    #[test]
    fn quaternion_examples() {
        let q = Quat::new(FRAC_1_SQRT_2, 0.0, 0.0, FRAC_1_SQRT_2);
        assert_eq!(quat_mul(&Quat::IDENTITY, &q), q);
        let inv = quat_inv(&q);
        assert_relative_eq!(inv.w, FRAC_1_SQRT_2, epsilon = 1e-15);
        assert_relative_eq!(inv.z, -FRAC_1_SQRT_2, epsilon = 1e-15);
        let v = quat_rotate(&q, &Vec3::x());
        assert_relative_eq!(v, Vec3::y(), epsilon = 1e-15);
    }

    proptest! {
        #[test]
        fn rotation_between_maps_direction(a in vec3(), b in vec3()) {
            let (r, degenerate) = rotation_between_flagged(&a, &b).unwrap();
            prop_assert!(is_rotation(&r, 1e-9));
            if !degenerate {
                let err = (r * a.normalize() - b.normalize()).norm();
                prop_assert!(err < 1e-9, "err {err}");
            }
        }

        #[test]
        fn matrix_round_trip(q in unit_quat()) {
            let m = q.to_matrix();
            let back = mat_to_quat(&m).unwrap();
            prop_assert!(back.w >= 0.0);
            prop_assert!((back.to_matrix() - m).abs().max() < 1e-9);
        }

        #[test]
        fn rotate_preserves_norm(q in unit_quat(), v in vec3()) {
            prop_assert!((quat_rotate(&q, &v).norm() - v.norm()).abs() < 1e-12);
            prop_assert!((quat_rotate(&q, &v) - q.to_matrix() * v).norm() < 1e-12);
        }

        #[test]
        fn mul_by_inverse_is_identity(q in unit_quat()) {
            let e = quat_mul(&q, &quat_inv(&q));
            prop_assert!((e.w - 1.0).abs() < 1e-9);
            prop_assert!(e.vector().norm() < 1e-9);
        }
    }
}
