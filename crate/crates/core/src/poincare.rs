//! Poincaré-sphere geometry.
//!
//! Fully polarized states are unit Stokes vectors. Linear horizontal sits on
//! `+s1`, linear vertical on `-s1`, diagonal (H+V) on `+s2`, anti-diagonal
//! (H-V) on `-s2`, circular states on `±s3`. Polarization transformations are
//! rotations of the sphere, stored as unit quaternions and applied by
//! conjugation (`q s q*`), right-handed about the rotation axis.

use std::f64::consts::TAU;
use std::ops::Neg;

use crate::error::{Error, Result};

/// Norm tolerance for vectors produced by arithmetic.
pub const UNIT_TOL: f64 = 1e-9;
/// Norm tolerance for caller-supplied axes.
pub const INPUT_TOL: f64 = 1e-6;

/// Normalized Stokes vector of a fully polarized state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StokesVector {
    s1: f64,
    s2: f64,
    s3: f64,
}

impl StokesVector {
    pub const H: StokesVector = StokesVector::raw(1.0, 0.0, 0.0);
    pub const V: StokesVector = StokesVector::raw(-1.0, 0.0, 0.0);
    pub const D: StokesVector = StokesVector::raw(0.0, 1.0, 0.0);
    pub const A: StokesVector = StokesVector::raw(0.0, -1.0, 0.0);
    pub const R: StokesVector = StokesVector::raw(0.0, 0.0, 1.0);
    pub const L: StokesVector = StokesVector::raw(0.0, 0.0, -1.0);

    const fn raw(s1: f64, s2: f64, s3: f64) -> Self {
        StokesVector { s1, s2, s3 }
    }

    /// Builds a Stokes vector from components whose norm is within
    /// [`INPUT_TOL`] of one. The stored vector is renormalized.
    pub fn new(s1: f64, s2: f64, s3: f64) -> Result<Self> {
        let n = (s1 * s1 + s2 * s2 + s3 * s3).sqrt();
        if !n.is_finite() || (n - 1.0).abs() > INPUT_TOL {
            return Err(Error::InvalidArgument(format!(
                "Stokes vector ({s1}, {s2}, {s3}) has norm {n}, expected 1"
            )));
        }
        Ok(StokesVector::raw(s1 / n, s2 / n, s3 / n))
    }

    /// Normalizes an arbitrary non-zero 3-vector onto the sphere.
    pub fn normalized(v: [f64; 3]) -> Result<Self> {
        let n = norm(v);
        if !n.is_finite() || n < 1e-300 {
            return Err(Error::InvalidArgument(format!(
                "cannot normalize vector {v:?}"
            )));
        }
        Ok(StokesVector::raw(v[0] / n, v[1] / n, v[2] / n))
    }

    /// Renormalizes a vector that is known to be close to unit length.
    pub(crate) fn renormalize(v: [f64; 3]) -> Self {
        let n = norm(v);
        StokesVector::raw(v[0] / n, v[1] / n, v[2] / n)
    }

    pub fn s1(&self) -> f64 {
        self.s1
    }

    pub fn s2(&self) -> f64 {
        self.s2
    }

    pub fn s3(&self) -> f64 {
        self.s3
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.s1, self.s2, self.s3]
    }

    pub fn dot(&self, other: &StokesVector) -> f64 {
        self.s1 * other.s1 + self.s2 * other.s2 + self.s3 * other.s3
    }

    pub fn norm(&self) -> f64 {
        norm(self.to_array())
    }

    /// Angle on the sphere between two states, in radians.
    pub fn angle_to(&self, other: &StokesVector) -> f64 {
        // atan2 form stays accurate for nearly parallel vectors
        let c = cross(self.to_array(), other.to_array());
        norm(c).atan2(self.dot(other))
    }
}

impl Neg for StokesVector {
    type Output = StokesVector;

    fn neg(self) -> StokesVector {
        StokesVector::raw(-self.s1, -self.s2, -self.s3)
    }
}

/// Unit quaternion `w + x i + y j + z k` acting on Stokes vectors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Default for Rotation {
    fn default() -> Self {
        Rotation::IDENTITY
    }
}

impl Rotation {
    pub const IDENTITY: Rotation = Rotation {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    /// Rotation by `angle` radians about a caller-supplied axis.
    ///
    /// The axis must be unit length within [`INPUT_TOL`] and the angle finite.
    pub fn from_axis_angle(axis: [f64; 3], angle: f64) -> Result<Self> {
        if !angle.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "rotation angle must be finite, got {angle}"
            )));
        }
        let axis = StokesVector::new(axis[0], axis[1], axis[2])?;
        Ok(Rotation::about(axis, angle))
    }

    /// Rotation by `angle` radians about a unit axis.
    pub fn about(axis: StokesVector, angle: f64) -> Self {
        let (s, c) = (0.5 * angle).sin_cos();
        Rotation {
            w: c,
            x: s * axis.s1,
            y: s * axis.s2,
            z: s * axis.s3,
        }
    }

    /// Builds a rotation from its rotation vector (axis times angle).
    pub fn from_rotation_vector(v: [f64; 3]) -> Self {
        let angle = norm(v);
        if angle < 1e-300 {
            return Rotation::IDENTITY;
        }
        Rotation::about(StokesVector::renormalize(v), angle)
    }

    /// Builds a rotation from raw quaternion components, normalizing them.
    pub fn from_quaternion(w: f64, x: f64, y: f64, z: f64) -> Result<Self> {
        let n = (w * w + x * x + y * y + z * z).sqrt();
        if !n.is_finite() || n < 1e-300 {
            return Err(Error::InvalidArgument(format!(
                "quaternion ({w}, {x}, {y}, {z}) cannot be normalized"
            )));
        }
        Ok(Rotation {
            w: w / n,
            x: x / n,
            y: y / n,
            z: z / n,
        })
    }

    pub fn norm(&self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    /// Quaternion angle `2 acos(w)`, reported in `[0, 2π)`.
    pub fn angle(&self) -> f64 {
        let a = 2.0 * self.w.clamp(-1.0, 1.0).acos();
        if a >= TAU {
            a - TAU
        } else {
            a
        }
    }

    /// Physical rotation angle of the sphere, in `[0, π]`.
    pub fn rotation_angle(&self) -> f64 {
        let v = (self.x * self.x + self.y * self.y + self.z * self.z).sqrt();
        2.0 * v.atan2(self.w.abs())
    }

    /// Inverse rotation (quaternion conjugate).
    pub fn inverse(&self) -> Self {
        Rotation {
            w: self.w,
            x: -self.x,
            y: -self.y,
            z: -self.z,
        }
    }

    /// Applies the rotation to a Stokes vector.
    pub fn apply(&self, s: StokesVector) -> StokesVector {
        let u = [self.x, self.y, self.z];
        let v = s.to_array();
        // q v q* = v + 2w (u x v) + 2 u x (u x v)
        let t = cross(u, v).map(|c| 2.0 * c);
        let ut = cross(u, t);
        StokesVector::renormalize([
            v[0] + self.w * t[0] + ut[0],
            v[1] + self.w * t[1] + ut[1],
            v[2] + self.w * t[2] + ut[2],
        ])
    }

    /// `outer ∘ inner`: applying the result equals applying `inner` first,
    /// then `outer`.
    pub fn compose(outer: &Rotation, inner: &Rotation) -> Rotation {
        let (a, b) = (outer, inner);
        let q = Rotation {
            w: a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
            x: a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
            y: a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
            z: a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
        };
        let n = q.norm();
        Rotation {
            w: q.w / n,
            x: q.x / n,
            y: q.y / n,
            z: q.z / n,
        }
    }

    /// True when both quaternions describe the same sphere rotation
    /// (`q` and `-q` are equivalent).
    pub fn approx_eq(&self, other: &Rotation, tol: f64) -> bool {
        let d = self.w * other.w + self.x * other.x + self.y * other.y + self.z * other.z;
        (1.0 - d.abs()) <= tol
    }
}

/// Fraction of light in state `s` exiting the analyzer port aligned with
/// `analyzer_axis`: `(1 + s·a) / 2`. The orthogonal port receives the
/// complement, and the pair sums to one exactly.
pub fn projection_probability(s: &StokesVector, analyzer_axis: &StokesVector) -> f64 {
    let d = s.dot(analyzer_axis).clamp(-1.0, 1.0);
    if d >= 0.0 {
        0.5 + 0.5 * d
    } else {
        1.0 - (0.5 - 0.5 * d)
    }
}

pub(crate) fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub(crate) fn norm(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}
