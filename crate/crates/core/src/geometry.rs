//! Fixed-size 3D rotation kernel: quaternions, rotation matrices, the skew
//! operator and Euler angles.
//!
//! Sign convention: [`skew`] returns the transpose of the usual cross-product
//! matrix, i.e. `skew(v) * u == u × v`. All kinematics in this crate are written
//! against that layout, so a body angular rate `w` drives a local-to-global
//! rotation `C` as `dC/dt = C · skew(w)ᵀ`.
//!
//! Quaternions are scalar-first. A unit quaternion `q` attached to an agent maps
//! local coordinates to global ones: `u_global = q u q*`.

use std::ops::{Mul, Neg};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

pub type Vec3<T> = Vector3<T>;
pub type Mat3<T> = Matrix3<T>;

/// Tolerance on `|q|² - 1` accepted by [`quat_to_rot`].
pub const UNIT_TOLERANCE: f64 = 1e-9;

/// Pitch values closer than this to ±π/2 are rejected by [`rot_to_euler`].
pub const GIMBAL_GUARD: f64 = 1e-6;

/// Quaternion `w + x i + y j + z k`. Not necessarily unit; pure (imaginary)
/// quaternions are used to carry 3-vectors through sandwich products.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quat<T> {
    pub w: T,
    pub x: T,
    pub y: T,
    pub z: T,
}

impl<T: Real> Quat<T> {
    pub fn new(w: T, x: T, y: T, z: T) -> Self {
        Self { w, x, y, z }
    }

    pub fn identity() -> Self {
        Self::new(T::one(), T::zero(), T::zero(), T::zero())
    }

    /// Imaginary quaternion carrying `v`.
    pub fn pure(v: &Vec3<T>) -> Self {
        Self::new(T::zero(), v.x, v.y, v.z)
    }

    pub fn vector(&self) -> Vec3<T> {
        Vec3::new(self.x, self.y, self.z)
    }

    pub fn conj(&self) -> Self {
        Self::new(self.w, -self.x, -self.y, -self.z)
    }

    pub fn norm_squared(&self) -> T {
        self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z
    }

    pub fn norm(&self) -> T {
        self.norm_squared().sqrt()
    }

    pub fn normalize(&self) -> Self {
        let n = self.norm();
        Self::new(self.w / n, self.x / n, self.y / n, self.z / n)
    }

    pub fn scale(&self, s: T) -> Self {
        Self::new(self.w * s, self.x * s, self.y * s, self.z * s)
    }

    pub fn add(&self, o: &Self) -> Self {
        Self::new(self.w + o.w, self.x + o.x, self.y + o.y, self.z + o.z)
    }

    pub fn to_array(&self) -> [T; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn from_array(a: [T; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    /// Rotates `v` by the sandwich product `q v q*`.
    pub fn rotate(&self, v: &Vec3<T>) -> Vec3<T> {
        (*self * Quat::pure(v) * self.conj()).vector()
    }

    /// Unit quaternion of the rotation by `|theta|` about `theta / |theta|`.
    pub fn from_rotation_vector(theta: &Vec3<T>) -> Self {
        let angle = theta.norm();
        let half = angle * T::lit(0.5);
        // sin(a/2)/a, series near zero
        let k = if angle < T::lit(1e-4) {
            T::lit(0.5) - angle * angle / T::lit(48.0)
        } else {
            half.sin() / angle
        };
        Self::new(half.cos(), theta.x * k, theta.y * k, theta.z * k)
    }

    pub fn cast<U: Real>(&self) -> Quat<U> {
        Quat::new(
            U::lit(self.w.to_f64_lossy()),
            U::lit(self.x.to_f64_lossy()),
            U::lit(self.y.to_f64_lossy()),
            U::lit(self.z.to_f64_lossy()),
        )
    }
}

impl<T: Real> Mul for Quat<T> {
    type Output = Quat<T>;

    fn mul(self, b: Quat<T>) -> Quat<T> {
        quat_mul(&self, &b)
    }
}

impl<T: Real> Neg for Quat<T> {
    type Output = Quat<T>;

    fn neg(self) -> Quat<T> {
        self.scale(-T::one())
    }
}

/// Hamilton product, scalar-first.
pub fn quat_mul<T: Real>(a: &Quat<T>, b: &Quat<T>) -> Quat<T> {
    Quat::new(
        a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
        a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
        a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
        a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
    )
}

/// Rotation matrix, stored as a 3×3 matrix that is orthonormal with det +1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Rot3<T: Real>(Mat3<T>);

impl<T: Real> Rot3<T> {
    pub fn identity() -> Self {
        Self(Mat3::identity())
    }

    /// Wraps `m` without checking orthonormality.
    pub fn from_matrix_unchecked(m: Mat3<T>) -> Self {
        Self(m)
    }

    pub fn matrix(&self) -> &Mat3<T> {
        &self.0
    }

    pub fn into_matrix(self) -> Mat3<T> {
        self.0
    }

    pub fn transpose(&self) -> Self {
        Self(self.0.transpose())
    }

    /// `‖RᵀR − I‖_F`.
    pub fn orthonormality_defect(&self) -> T {
        orthonormality_defect(&self.0)
    }

    pub fn cast<U: Real>(&self) -> Rot3<U> {
        Rot3(self.0.map(|v| U::lit(v.to_f64_lossy())))
    }
}

impl<T: Real> Mul for Rot3<T> {
    type Output = Rot3<T>;

    fn mul(self, rhs: Rot3<T>) -> Rot3<T> {
        Rot3(self.0 * rhs.0)
    }
}

impl<T: Real> Mul<Vec3<T>> for Rot3<T> {
    type Output = Vec3<T>;

    fn mul(self, rhs: Vec3<T>) -> Vec3<T> {
        self.0 * rhs
    }
}

impl<T: Real> Mul<&Vec3<T>> for &Rot3<T> {
    type Output = Vec3<T>;

    fn mul(self, rhs: &Vec3<T>) -> Vec3<T> {
        self.0 * rhs
    }
}

pub fn orthonormality_defect<T: Real>(m: &Mat3<T>) -> T {
    (m.transpose() * m - Mat3::identity()).norm()
}

/// Skew matrix with rows `(0, vz, -vy)`, `(-vz, 0, vx)`, `(vy, -vx, 0)`.
///
/// This is the negative (transpose) of the common cross-product matrix:
/// `skew(v) * u == u.cross(&v)`.
pub fn skew<T: Real>(v: &Vec3<T>) -> Mat3<T> {
    let z = T::zero();
    Mat3::new(z, v.z, -v.y, -v.z, z, v.x, v.y, -v.x, z)
}

/// Rotation matrix `exp(skew(theta)ᵀ)`: rotation by `|theta|` about `theta`.
pub fn so3_exp<T: Real>(theta: &Vec3<T>) -> Rot3<T> {
    let angle2 = theta.norm_squared();
    let k = skew(theta).transpose();
    let (a, b) = if angle2 < T::lit(1e-8) {
        // Taylor: sin(x)/x and (1-cos x)/x²
        (
            T::one() - angle2 / T::lit(6.0) + angle2 * angle2 / T::lit(120.0),
            T::lit(0.5) - angle2 / T::lit(24.0) + angle2 * angle2 / T::lit(720.0),
        )
    } else {
        let angle = angle2.sqrt();
        (angle.sin() / angle, (T::one() - angle.cos()) / angle2)
    };
    Rot3(Mat3::identity() + k * a + k * k * b)
}

/// Rotation matrix of a quaternion from its components, without normalization.
///
/// For a unit quaternion this is the usual rotation matrix; for `|q| ≠ 1` it is
/// that rotation scaled by `|q|²`. Used where the quaternion norm is itself a
/// state variable.
pub fn quat_to_matrix_raw<T: Real>(q: &Quat<T>) -> Mat3<T> {
    let (w, x, y, z) = (q.w, q.x, q.y, q.z);
    let two = T::lit(2.0);
    Mat3::new(
        w * w + x * x - y * y - z * z,
        two * (x * y - w * z),
        two * (x * z + w * y),
        two * (x * y + w * z),
        w * w - x * x + y * y - z * z,
        two * (y * z - w * x),
        two * (x * z - w * y),
        two * (y * z + w * x),
        w * w - x * x - y * y + z * z,
    )
}

/// Rotation matrix `C(q)` such that `C(q) u` is the vector part of `q u q*`.
pub fn quat_to_rot<T: Real>(q: &Quat<T>) -> Result<Rot3<T>> {
    let tol = T::lit(UNIT_TOLERANCE).max(T::eps() * T::lit(64.0));
    let defect = (q.norm_squared() - T::one()).abs();
    if !(defect <= tol) {
        return Err(Error::InvalidArgument(format!(
            "quaternion is not unit (|q|² - 1 = {:e})",
            defect.to_f64_lossy()
        )));
    }
    Ok(Rot3(quat_to_matrix_raw(q)))
}

/// Unit quaternion of a rotation matrix (Shepperd's method), `w >= 0`.
pub fn rot_to_quat<T: Real>(r: &Rot3<T>) -> Quat<T> {
    let m = &r.0;
    let one = T::one();
    let quarter = T::lit(0.25);
    let tr = m[(0, 0)] + m[(1, 1)] + m[(2, 2)];
    let q = if tr > m[(0, 0)] && tr > m[(1, 1)] && tr > m[(2, 2)] {
        let s = (one + tr).sqrt() * T::lit(2.0);
        Quat::new(
            quarter * s,
            (m[(2, 1)] - m[(1, 2)]) / s,
            (m[(0, 2)] - m[(2, 0)]) / s,
            (m[(1, 0)] - m[(0, 1)]) / s,
        )
    } else if m[(0, 0)] > m[(1, 1)] && m[(0, 0)] > m[(2, 2)] {
        let s = (one + m[(0, 0)] - m[(1, 1)] - m[(2, 2)]).sqrt() * T::lit(2.0);
        Quat::new(
            (m[(2, 1)] - m[(1, 2)]) / s,
            quarter * s,
            (m[(0, 1)] + m[(1, 0)]) / s,
            (m[(0, 2)] + m[(2, 0)]) / s,
        )
    } else if m[(1, 1)] > m[(2, 2)] {
        let s = (one + m[(1, 1)] - m[(0, 0)] - m[(2, 2)]).sqrt() * T::lit(2.0);
        Quat::new(
            (m[(0, 2)] - m[(2, 0)]) / s,
            (m[(0, 1)] + m[(1, 0)]) / s,
            quarter * s,
            (m[(1, 2)] + m[(2, 1)]) / s,
        )
    } else {
        let s = (one + m[(2, 2)] - m[(0, 0)] - m[(1, 1)]).sqrt() * T::lit(2.0);
        Quat::new(
            (m[(1, 0)] - m[(0, 1)]) / s,
            (m[(0, 2)] + m[(2, 0)]) / s,
            (m[(1, 2)] + m[(2, 1)]) / s,
            quarter * s,
        )
    };
    let q = q.normalize();
    if q.w < T::zero() {
        -q
    } else {
        q
    }
}

/// Roll, pitch and yaw of a rotation, Z-Y-X convention.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Euler<T> {
    pub roll: T,
    pub pitch: T,
    pub yaw: T,
}

impl<T: Real> Euler<T> {
    pub fn new(roll: T, pitch: T, yaw: T) -> Self {
        Self { roll, pitch, yaw }
    }

    pub fn to_array(&self) -> [T; 3] {
        [self.roll, self.pitch, self.yaw]
    }
}

/// `Rz(yaw) · Ry(pitch) · Rx(roll)`.
pub fn rot_from_euler<T: Real>(e: &Euler<T>) -> Rot3<T> {
    let (sr, cr) = e.roll.sin_cos();
    let (sp, cp) = e.pitch.sin_cos();
    let (sy, cy) = e.yaw.sin_cos();
    Rot3(Mat3::new(
        cy * cp,
        cy * sp * sr - sy * cr,
        cy * sp * cr + sy * sr,
        sy * cp,
        sy * sp * sr + cy * cr,
        sy * sp * cr - cy * sr,
        -sp,
        cp * sr,
        cp * cr,
    ))
}

/// Inverse of [`rot_from_euler`] away from gimbal lock.
pub fn rot_to_euler<T: Real>(r: &Rot3<T>) -> Result<Euler<T>> {
    let m = &r.0;
    let s = (-m[(2, 0)]).max(-T::one()).min(T::one());
    let pitch = s.asin();
    if pitch.abs() >= T::frac_pi_2() - T::lit(GIMBAL_GUARD) {
        return Err(Error::DegenerateOrientation {
            pitch: pitch.to_f64_lossy(),
        });
    }
    let roll = m[(2, 1)].atan2(m[(2, 2)]);
    let yaw = m[(1, 0)].atan2(m[(0, 0)]);
    Ok(Euler::new(roll, pitch, yaw))
}

/// Nearest rotation in Frobenius norm (orthogonal Procrustes via SVD).
pub fn project_to_so3<T: Real>(m: &Mat3<T>) -> Result<Rot3<T>> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("matrix to project".into()));
    }
    let svd = m.svd(true, true);
    let s = svd.singular_values;
    let smax = s.max();
    let smin = s.min();
    if !(smin > smax * T::eps() * T::lit(16.0)) {
        return Err(Error::ProjectionFailed {
            sigma_min: smin.to_f64_lossy(),
        });
    }
    let u = svd.u.expect("U requested");
    let v_t = svd.v_t.expect("Vᵀ requested");
    let mut fix = Mat3::identity();
    if (u * v_t).determinant() < T::zero() {
        // singular values are not sorted; flip the axis of the smallest one
        let k = s.imin();
        fix[(k, k)] = -T::one();
    }
    Ok(Rot3(u * fix * v_t))
}

/// Wraps an angle to `(-π, π]`.
pub fn wrap_angle<T: Real>(a: T) -> T {
    let two_pi = T::two_pi();
    let mut r = a % two_pi;
    if r > T::pi() {
        r -= two_pi;
    } else if r <= -T::pi() {
        r += two_pi;
    }
    r
}
