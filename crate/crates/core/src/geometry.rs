//! Rotation, quaternion and pose arithmetic.
//!
//! Quaternions are Hamilton convention, scalar first `(w, x, y, z)`, and are
//! always kept in canonical sign (`w >= 0`). Rotation matrices are row-major.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Vec3 = [f64; 3];

/// Tolerance on `|q| - 1` accepted when a caller hands us raw components.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("quaternion norm {norm} is not unit (tolerance {UNIT_NORM_TOLERANCE})")]
    NonUnitQuaternion { norm: f64 },
    #[error("quaternion has zero or non-finite norm")]
    DegenerateQuaternion,
}

pub fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

/// Unit quaternion in canonical sign.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct Quaternion {
    w: f64,
    x: f64,
    y: f64,
    z: f64,
}

impl Quaternion {
    pub const IDENTITY: Quaternion = Quaternion {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    /// Accepts components that are already unit norm (within
    /// [`UNIT_NORM_TOLERANCE`]). Values are kept bit-for-bit apart from the
    /// canonical sign flip, so stored quaternions round-trip exactly.
    pub fn from_components(w: f64, x: f64, y: f64, z: f64) -> Result<Self, GeometryError> {
        let n = (w * w + x * x + y * y + z * z).sqrt();
        if !n.is_finite() {
            return Err(GeometryError::DegenerateQuaternion);
        }
        if (n - 1.0).abs() > UNIT_NORM_TOLERANCE {
            return Err(GeometryError::NonUnitQuaternion { norm: n });
        }
        let s = if w < 0.0 { -1.0 } else { 1.0 };
        Ok(Quaternion {
            w: w * s,
            x: x * s,
            y: y * s,
            z: z * s,
        })
    }

    /// Normalizes arbitrary non-zero components.
    pub fn normalized(w: f64, x: f64, y: f64, z: f64) -> Result<Self, GeometryError> {
        let n = (w * w + x * x + y * y + z * z).sqrt();
        if !(n.is_finite() && n > 0.0) {
            return Err(GeometryError::DegenerateQuaternion);
        }
        let s = if w < 0.0 { -1.0 / n } else { 1.0 / n };
        Ok(Quaternion {
            w: w * s,
            x: x * s,
            y: y * s,
            z: z * s,
        })
    }

    pub fn from_axis_angle(axis: Vec3, angle: f64) -> Self {
        let n = norm(axis);
        if n == 0.0 || angle == 0.0 {
            return Self::IDENTITY;
        }
        let (s, c) = (angle * 0.5).sin_cos();
        let k = s / n;
        Self::normalized(c, axis[0] * k, axis[1] * k, axis[2] * k).unwrap_or(Self::IDENTITY)
    }

    pub fn w(&self) -> f64 {
        self.w
    }
    pub fn x(&self) -> f64 {
        self.x
    }
    pub fn y(&self) -> f64 {
        self.y
    }
    pub fn z(&self) -> f64 {
        self.z
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn dot(&self, other: &Quaternion) -> f64 {
        self.w * other.w + self.x * other.x + self.y * other.y + self.z * other.z
    }

    /// Hamilton product `self * other`.
    pub fn mul(&self, o: &Quaternion) -> Quaternion {
        let (a, b) = (self, o);
        let w = a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z;
        let x = a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y;
        let y = a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x;
        let z = a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w;
        Quaternion::normalized(w, x, y, z).unwrap_or(Quaternion::IDENTITY)
    }

    pub fn to_rotation(&self) -> RotationMatrix {
        let Quaternion { w, x, y, z } = *self;
        RotationMatrix([
            [
                1.0 - 2.0 * (y * y + z * z),
                2.0 * (x * y - w * z),
                2.0 * (x * z + w * y),
            ],
            [
                2.0 * (x * y + w * z),
                1.0 - 2.0 * (x * x + z * z),
                2.0 * (y * z - w * x),
            ],
            [
                2.0 * (x * z - w * y),
                2.0 * (y * z + w * x),
                1.0 - 2.0 * (x * x + y * y),
            ],
        ])
    }

    pub fn conjugate(&self) -> Quaternion {
        Quaternion {
            w: self.w,
            x: -self.x,
            y: -self.y,
            z: -self.z,
        }
    }

    /// Geodesic angle between two orientations, evaluated with `atan2` so it
    /// stays accurate for nearly identical rotations.
    pub fn angle_to(&self, other: &Quaternion) -> f64 {
        let d = self.conjugate().mul(other);
        2.0 * (d.x * d.x + d.y * d.y + d.z * d.z).sqrt().atan2(d.w.abs())
    }
}

impl TryFrom<[f64; 4]> for Quaternion {
    type Error = GeometryError;

    fn try_from(c: [f64; 4]) -> Result<Self, Self::Error> {
        Quaternion::from_components(c[0], c[1], c[2], c[3])
    }
}

impl From<Quaternion> for [f64; 4] {
    fn from(q: Quaternion) -> Self {
        q.to_array()
    }
}

/// Row-major 3x3 rotation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RotationMatrix(pub [[f64; 3]; 3]);

impl RotationMatrix {
    pub const IDENTITY: RotationMatrix =
        RotationMatrix([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);

    pub fn rot_x(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        RotationMatrix([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])
    }

    pub fn rot_y(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        RotationMatrix([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])
    }

    pub fn rot_z(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        RotationMatrix([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    }

    pub fn mul(&self, other: &RotationMatrix) -> RotationMatrix {
        let (a, b) = (&self.0, &other.0);
        let mut out = [[0.0; 3]; 3];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
            }
        }
        RotationMatrix(out)
    }

    pub fn transpose(&self) -> RotationMatrix {
        let m = &self.0;
        RotationMatrix([
            [m[0][0], m[1][0], m[2][0]],
            [m[0][1], m[1][1], m[2][1]],
            [m[0][2], m[1][2], m[2][2]],
        ])
    }

    pub fn apply(&self, v: Vec3) -> Vec3 {
        let m = &self.0;
        [
            m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
            m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
            m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
        ]
    }

    pub fn trace(&self) -> f64 {
        self.0[0][0] + self.0[1][1] + self.0[2][2]
    }

    pub fn column(&self, j: usize) -> Vec3 {
        [self.0[0][j], self.0[1][j], self.0[2][j]]
    }

    pub fn determinant(&self) -> f64 {
        let m = &self.0;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    /// Largest entry of `|R^T R - I|`.
    pub fn orthonormality_defect(&self) -> f64 {
        let p = self.transpose().mul(self);
        let mut worst: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let e = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((p.0[i][j] - e).abs());
            }
        }
        worst
    }

    /// Shepperd's method; picks the numerically largest pivot.
    pub fn to_quaternion(&self) -> Quaternion {
        let m = &self.0;
        let tr = self.trace();
        let (w, x, y, z);
        if tr > m[0][0] && tr > m[1][1] && tr > m[2][2] {
            let s = (1.0 + tr).sqrt() * 2.0;
            w = 0.25 * s;
            x = (m[2][1] - m[1][2]) / s;
            y = (m[0][2] - m[2][0]) / s;
            z = (m[1][0] - m[0][1]) / s;
        } else if m[0][0] > m[1][1] && m[0][0] > m[2][2] {
            let s = (1.0 + m[0][0] - m[1][1] - m[2][2]).sqrt() * 2.0;
            w = (m[2][1] - m[1][2]) / s;
            x = 0.25 * s;
            y = (m[0][1] + m[1][0]) / s;
            z = (m[0][2] + m[2][0]) / s;
        } else if m[1][1] > m[2][2] {
            let s = (1.0 + m[1][1] - m[0][0] - m[2][2]).sqrt() * 2.0;
            w = (m[0][2] - m[2][0]) / s;
            x = (m[0][1] + m[1][0]) / s;
            y = 0.25 * s;
            z = (m[1][2] + m[2][1]) / s;
        } else {
            let s = (1.0 + m[2][2] - m[0][0] - m[1][1]).sqrt() * 2.0;
            w = (m[1][0] - m[0][1]) / s;
            x = (m[0][2] + m[2][0]) / s;
            y = (m[1][2] + m[2][1]) / s;
            z = 0.25 * s;
        }
        Quaternion::normalized(w, x, y, z).unwrap_or(Quaternion::IDENTITY)
    }
}

/// Converts raw `(w, x, y, z)` components, rejecting non-unit input.
pub fn quat_to_rotation(q: [f64; 4]) -> Result<RotationMatrix, GeometryError> {
    Ok(Quaternion::from_components(q[0], q[1], q[2], q[3])?.to_rotation())
}

pub fn rotation_to_quat(r: &RotationMatrix) -> Quaternion {
    r.to_quaternion()
}

/// Axis-angle distance `acos((trace(R1 R2^T) - 1) / 2)`, argument clamped to
/// `[-1, 1]`. Arguments within a few ulps of 1 (product roundoff of identical
/// rotations) snap to exactly 1.
pub fn rotation_error(r1: &RotationMatrix, r2: &RotationMatrix) -> f64 {
    let c = (r1.mul(&r2.transpose()).trace() - 1.0) / 2.0;
    if c >= 1.0 - 8.0 * f64::EPSILON {
        return 0.0;
    }
    c.clamp(-1.0, 1.0).acos()
}

/// Tip position (meters, world frame) plus orientation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub position: Vec3,
    pub orientation: Quaternion,
}

impl Pose {
    pub const IDENTITY: Pose = Pose {
        position: [0.0; 3],
        orientation: Quaternion::IDENTITY,
    };

    pub fn new(position: Vec3, orientation: Quaternion) -> Self {
        Pose {
            position,
            orientation,
        }
    }

    pub fn from_rotation(position: Vec3, rotation: &RotationMatrix) -> Self {
        Pose::new(position, rotation.to_quaternion())
    }

    pub fn rotation(&self) -> RotationMatrix {
        self.orientation.to_rotation()
    }

    /// `self ∘ other`: `other` expressed in the frame of `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        let r = self.rotation();
        Pose {
            position: add(self.position, r.apply(other.position)),
            orientation: self.orientation.mul(&other.orientation),
        }
    }

    /// `[p_x, p_y, p_z, q0, q1, q2, q3]`.
    pub fn to_array(&self) -> [f64; 7] {
        let p = self.position;
        let q = self.orientation.to_array();
        [p[0], p[1], p[2], q[0], q[1], q[2], q[3]]
    }

    pub fn from_array(v: [f64; 7]) -> Result<Self, GeometryError> {
        Ok(Pose::new(
            [v[0], v[1], v[2]],
            Quaternion::from_components(v[3], v[4], v[5], v[6])?,
        ))
    }
}

/// Euclidean distance between the two positions, in centimeters.
pub fn translation_error(p1: &Pose, p2: &Pose) -> f64 {
    norm(sub(p1.position, p2.position)) * 100.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn rodrigues(axis: Vec3, angle: f64) -> RotationMatrix {
        // R = I + sin(a) K + (1 - cos(a)) K^2, K the unit-axis cross matrix
        let n = norm(axis);
        let k = scale(axis, 1.0 / n);
        let kx = [[0.0, -k[2], k[1]], [k[2], 0.0, -k[0]], [-k[1], k[0], 0.0]];
        let mut k2 = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                k2[i][j] = (0..3).map(|l| kx[i][l] * kx[l][j]).sum();
            }
        }
        let (s, c) = angle.sin_cos();
        let mut out = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                let id = if i == j { 1.0 } else { 0.0 };
                out[i][j] = id + s * kx[i][j] + (1.0 - c) * k2[i][j];
            }
        }
        RotationMatrix(out)
    }

    fn max_abs_diff(a: &RotationMatrix, b: &RotationMatrix) -> f64 {
        let mut m: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                m = m.max((a.0[i][j] - b.0[i][j]).abs());
            }
        }
        m
    }

    #[test]
    fn identity_quaternion_gives_identity_matrix() {
        let r = quat_to_rotation([1.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(r, RotationMatrix::IDENTITY);
    }

    #[test]
    fn half_turn_about_z() {
        let r = quat_to_rotation([0.0, 0.0, 0.0, 1.0]).unwrap();
        let expected = RotationMatrix([[-1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, 1.0]]);
        assert!(max_abs_diff(&r, &expected) == 0.0);
    }

    #[test]
    fn non_unit_quaternion_is_rejected() {
        let err = quat_to_rotation([1.0, 0.1, 0.0, 0.0]).unwrap_err();
        assert!(matches!(err, GeometryError::NonUnitQuaternion { .. }));
        assert!(quat_to_rotation([0.0; 4]).is_err());
    }

    #[test]
    fn canonical_sign_is_enforced() {
        let q = Quaternion::from_components(-1.0, 0.0, 0.0, 0.0).unwrap();
        assert_eq!(q, Quaternion::IDENTITY);
    }

    #[test]
    fn rotation_error_cases() {
        let id = RotationMatrix::IDENTITY;
        assert_eq!(rotation_error(&id, &id), 0.0);
        let half = RotationMatrix::rot_z(PI);
        assert!((rotation_error(&id, &half) - PI).abs() < 1e-12);
    }

    #[test]
    fn translation_error_three_four_five() {
        let a = Pose::IDENTITY;
        let b = Pose::new([0.03, 0.04, 0.0], Quaternion::IDENTITY);
        assert!((translation_error(&a, &b) - 5.0).abs() < 1e-12);
        assert_eq!(translation_error(&a, &a), 0.0);
    }

    fn unit_axis() -> impl Strategy<Value = Vec3> {
        (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64)
            .prop_filter("non-degenerate axis", |(x, y, z)| x * x + y * y + z * z > 1e-3)
            .prop_map(|(x, y, z)| [x, y, z])
    }

    proptest! {
        #[test]
        fn quaternion_matches_rodrigues(axis in unit_axis(), angle in -PI..PI) {
            let q = Quaternion::from_axis_angle(axis, angle);
            let r = q.to_rotation();
            prop_assert!(max_abs_diff(&r, &rodrigues(axis, angle)) < 1e-12);
            prop_assert!(r.orthonormality_defect() < 1e-9);
            prop_assert!((r.determinant() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn quaternion_round_trip(axis in unit_axis(), angle in -PI..PI) {
            let q = Quaternion::from_axis_angle(axis, angle);
            let back = rotation_to_quat(&q.to_rotation());
            for (a, b) in q.to_array().iter().zip(back.to_array()) {
                prop_assert!((a - b).abs() < 1e-9);
            }
            prop_assert!(back.w() >= 0.0);
        }

        #[test]
        fn rotation_error_matches_geodesic(a1 in unit_axis(), t1 in -PI..PI, a2 in unit_axis(), t2 in -PI..PI) {
            let q1 = Quaternion::from_axis_angle(a1, t1);
            let q2 = Quaternion::from_axis_angle(a2, t2);
            let geo = 2.0 * q1.dot(&q2).abs().min(1.0).acos();
            let e = rotation_error(&q1.to_rotation(), &q2.to_rotation());
            // acos loses precision near 0 and pi; compare away from the ends
            prop_assume!(geo > 1e-4 && geo < PI - 1e-4);
            prop_assert!((e - geo).abs() < 1e-9);
            let e_rev = rotation_error(&q2.to_rotation(), &q1.to_rotation());
            prop_assert!((e - e_rev).abs() < 1e-12);
        }

        #[test]
        fn single_axis_angle_is_recovered(axis in unit_axis(), angle in 1e-3..(PI - 1e-3)) {
            let r = rodrigues(axis, angle);
            prop_assert!((rotation_error(&RotationMatrix::IDENTITY, &r) - angle).abs() < 1e-9);
        }

        #[test]
        fn rotation_preserves_norm(axis in unit_axis(), angle in -PI..PI,
                                   v in prop::array::uniform3(-10.0..10.0f64)) {
            let r = Quaternion::from_axis_angle(axis, angle).to_rotation();
            prop_assert!((norm(r.apply(v)) - norm(v)).abs() < 1e-9);
        }

        #[test]
        fn translation_error_expansion(p in prop::array::uniform3(-1.0..1.0f64),
                                       q in prop::array::uniform3(-1.0..1.0f64)) {
            let a = Pose::new(p, Quaternion::IDENTITY);
            let b = Pose::new(q, Quaternion::IDENTITY);
            let hand = ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt() * 100.0;
            prop_assert!((translation_error(&a, &b) - hand).abs() < 1e-12);
            prop_assert_eq!(translation_error(&a, &b), translation_error(&b, &a));
        }
    }

    #[test]
    fn rotation_error_self_is_exactly_zero() {
        let q = Quaternion::from_axis_angle([0.3, -0.2, 0.9], 1.234);
        let r = q.to_rotation();
        assert_eq!(rotation_error(&r, &r), 0.0);
    }
}
