//! Quaternion and rotation-matrix algebra.
//!
//! Conventions, fixed once for the whole crate:
//!
//! * Quaternions use the Hamilton product and are stored scalar-last
//!   (`x, y, z, w`).
//! * For an attitude quaternion `q`, [`Quaternion::rotation_matrix`] returns
//!   `C(q)`, the matrix mapping *global*-frame vectors into the *body* frame.
//!   It is the transpose of the usual active rotation `R(q)`, hence
//!   `C(a ⊗ b) = C(b) · C(a)`.
//! * Kinematics use body-frame angular velocity:
//!   `q̇ = ½ q ⊗ [ω, 0] = ½ Ω(ω) q`, equivalently `Ċ = -[ω]× C`.

use nalgebra::{Matrix3, Matrix4, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::autodiff::Scalar;
use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
/// `C(q)`: orthonormal, determinant +1.
pub type RotationMatrix = Matrix3<f64>;

/// Tolerance on `| |q| - 1 |` accepted by the checked conversions.
pub const UNIT_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quaternion<S = f64> {
    pub x: S,
    pub y: S,
    pub z: S,
    pub w: S,
}

impl<S: Scalar> Quaternion<S> {
    pub fn new(x: S, y: S, z: S, w: S) -> Self {
        Quaternion { x, y, z, w }
    }

    pub fn identity() -> Self {
        Quaternion::new(S::zero(), S::zero(), S::zero(), S::one())
    }

    pub fn from_slice(v: &[S]) -> Self {
        Quaternion::new(v[0], v[1], v[2], v[3])
    }

    pub fn to_array(&self) -> [S; 4] {
        [self.x, self.y, self.z, self.w]
    }

    pub fn vector(&self) -> Vector3<S> {
        Vector3::new(self.x, self.y, self.z)
    }

    pub fn pure(v: &Vector3<S>) -> Self {
        Quaternion::new(v[0], v[1], v[2], S::zero())
    }

    pub fn conjugate(&self) -> Self {
        Quaternion::new(-self.x, -self.y, -self.z, self.w)
    }

    pub fn norm_squared(&self) -> S {
        self.x * self.x + self.y * self.y + self.z * self.z + self.w * self.w
    }

    pub fn scale(&self, k: S) -> Self {
        Quaternion::new(self.x * k, self.y * k, self.z * k, self.w * k)
    }

    /// Hamilton product `self ⊗ rhs`.
    pub fn mul(&self, rhs: &Self) -> Self {
        let (a, b) = (self, rhs);
        Quaternion::new(
            a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
            a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
            a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
            a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
        )
    }

    /// `C(q)` as the homogeneous quadratic form; equals the global-to-body
    /// rotation for unit `q` and scales as `|q|²` otherwise.
    pub fn rotation_matrix(&self) -> Matrix3<S> {
        let (x, y, z, w) = (self.x, self.y, self.z, self.w);
        let two = S::from_f64(2.0);
        let (xx, yy, zz, ww) = (x * x, y * y, z * z, w * w);
        let (xy, xz, yz) = (x * y, x * z, y * z);
        let (wx, wy, wz) = (w * x, w * y, w * z);
        Matrix3::new(
            ww + xx - yy - zz,
            two * (xy + wz),
            two * (xz - wy),
            two * (xy - wz),
            ww - xx + yy - zz,
            two * (yz + wx),
            two * (xz + wy),
            two * (yz - wx),
            ww - xx - yy + zz,
        )
    }

    /// `½ Ω(ω) q`, the attitude rate for body angular velocity `ω`.
    pub fn rate(&self, omega: &Vector3<S>) -> Self {
        self.mul(&Quaternion::pure(omega)).scale(S::from_f64(0.5))
    }
}

impl Quaternion<f64> {
    pub fn norm(&self) -> f64 {
        self.norm_squared().sqrt()
    }

    pub fn normalized(&self) -> Self {
        self.scale(1.0 / self.norm())
    }

    pub fn as_vector4(&self) -> Vector4<f64> {
        Vector4::new(self.x, self.y, self.z, self.w)
    }

    pub fn from_vector4(v: &Vector4<f64>) -> Self {
        Quaternion::new(v[0], v[1], v[2], v[3])
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    /// Rotation angle between two attitudes, insensitive to the sign of
    /// either quaternion.
    pub fn angle_to(&self, other: &Self) -> f64 {
        let d = self.conjugate().mul(other);
        2.0 * d.vector().norm().atan2(d.w.abs())
    }
}

pub fn quat_multiply(a: &Quaternion, b: &Quaternion) -> Quaternion {
    a.mul(b)
}

/// Checked `C(q)`; rejects quaternions farther than [`UNIT_TOLERANCE`] from
/// unit norm.
pub fn quat_to_matrix(q: &Quaternion) -> Result<RotationMatrix> {
    let norm = q.norm();
    if !norm.is_finite() || (norm - 1.0).abs() > UNIT_TOLERANCE {
        return Err(Error::NonUnitQuaternion { norm });
    }
    Ok(q.rotation_matrix())
}

pub fn quat_derivative(q: &Quaternion, omega: &Vec3) -> Vector4<f64> {
    q.rate(omega).as_vector4()
}

pub fn skew<S: Scalar>(v: &Vector3<S>) -> Matrix3<S> {
    let z = S::zero();
    Matrix3::new(z, -v[2], v[1], v[2], z, -v[0], -v[1], v[0], z)
}

/// Quaternion of a rotation by `angle` about `axis` (normalized internally).
pub fn axis_angle_to_quat(axis: &Vec3, angle: f64) -> Result<Quaternion> {
    let n = axis.norm();
    if !(n > 0.0) || !n.is_finite() {
        return Err(Error::ZeroAxis);
    }
    let (s, c) = (0.5 * angle).sin_cos();
    let a = axis * (s / n);
    Ok(Quaternion::new(a[0], a[1], a[2], c))
}

/// Exact attitude update for constant body rate over `dt`.
pub fn integrate_constant_rate(q: &Quaternion, omega: &Vec3, dt: f64) -> Quaternion {
    let theta = omega.norm() * dt;
    if theta == 0.0 {
        return *q;
    }
    let step = axis_angle_to_quat(omega, theta).expect("nonzero rotation has an axis");
    q.mul(&step)
}

/// `Ω(ω)` such that `q ⊗ [ω, 0] = Ω(ω) q` in scalar-last storage.
pub fn rate_matrix(omega: &Vec3) -> Matrix4<f64> {
    let (a, b, c) = (omega[0], omega[1], omega[2]);
    Matrix4::new(
        0.0, c, -b, a, //
        -c, 0.0, a, b, //
        b, -a, 0.0, c, //
        -a, -b, -c, 0.0,
    )
}

/// `L(q)` such that `q ⊗ p = L(q) p` in scalar-last storage.
pub fn left_matrix(q: &Quaternion) -> Matrix4<f64> {
    let (x, y, z, w) = (q.x, q.y, q.z, q.w);
    Matrix4::new(
        w, -z, y, x, //
        z, w, -x, y, //
        -y, x, w, z, //
        -x, -y, -z, w,
    )
}
