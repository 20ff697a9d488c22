//! Rigid transforms, axis-angle maps and rotation metrics.
//!
//! Rotations are stored as 3×3 matrices ([`Rotation3`]). Quaternions only
//! appear at the boundaries (group tables, JSON output), always converted
//! through [`RigidTransform::quaternion`].

use nalgebra::{Matrix3, Rotation3, Unit, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;

/// Maximum deviation from orthonormality accepted for an input rotation.
pub const ROTATION_TOLERANCE: f64 = 1e-9;
/// Maximum deviation of an axis norm from one.
pub const AXIS_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Se3Error {
    #[error("matrix is not a proper rotation (orthonormality error {ortho:.3e}, det {det:.12})")]
    InvalidRotation { ortho: f64, det: f64 },
    #[error("axis norm {0} deviates from 1")]
    BadAxis(f64),
}

/// Checks orthonormality and `det = +1` and wraps the matrix.
pub fn validate_rotation(m: &Matrix3<f64>) -> Result<Rotation3<f64>, Se3Error> {
    let ortho = (m.transpose() * m - Matrix3::identity()).abs().max();
    let det = m.determinant();
    if !ortho.is_finite() || ortho > ROTATION_TOLERANCE || (det - 1.0).abs() > ROTATION_TOLERANCE {
        return Err(Se3Error::InvalidRotation { ortho, det });
    }
    Ok(Rotation3::from_matrix_unchecked(*m))
}

fn unit_axis(axis: &Vec3) -> Result<Unit<Vec3>, Se3Error> {
    let n = axis.norm();
    if !n.is_finite() || (n - 1.0).abs() > AXIS_TOLERANCE {
        return Err(Se3Error::BadAxis(n));
    }
    Ok(Unit::new_normalize(*axis))
}

/// A proper rigid motion `x ↦ R x + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TransformRepr", into = "TransformRepr")]
pub struct RigidTransform {
    pub rotation: Rotation3<f64>,
    pub translation: Vec3,
}

/// Serialized layout: row-major rotation matrix plus translation.
#[derive(Serialize, Deserialize)]
struct TransformRepr {
    #[serde(rename = "R")]
    r: [[f64; 3]; 3],
    t: [f64; 3],
}

impl From<RigidTransform> for TransformRepr {
    fn from(tr: RigidTransform) -> Self {
        let m = tr.rotation.matrix();
        let mut r = [[0.0; 3]; 3];
        for (i, row) in r.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = m[(i, j)];
            }
        }
        TransformRepr {
            r,
            t: [tr.translation.x, tr.translation.y, tr.translation.z],
        }
    }
}

impl TryFrom<TransformRepr> for RigidTransform {
    type Error = Se3Error;

    fn try_from(repr: TransformRepr) -> Result<Self, Self::Error> {
        let m = Matrix3::from_fn(|i, j| repr.r[i][j]);
        Ok(RigidTransform {
            rotation: validate_rotation(&m)?,
            translation: Vec3::from(repr.t),
        })
    }
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        RigidTransform {
            rotation: Rotation3::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn new(rotation: Rotation3<f64>, translation: Vec3) -> Self {
        RigidTransform {
            rotation,
            translation,
        }
    }

    pub fn from_rotation(rotation: Rotation3<f64>) -> Self {
        Self::new(rotation, Vec3::zeros())
    }

    pub fn from_translation(translation: Vec3) -> Self {
        Self::new(Rotation3::identity(), translation)
    }

    /// Validating constructor for rotations coming from outside the crate.
    pub fn try_from_matrix(m: &Matrix3<f64>, translation: Vec3) -> Result<Self, Se3Error> {
        Ok(Self::new(validate_rotation(m)?, translation))
    }

    #[inline]
    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    #[inline]
    pub fn apply_vector(&self, v: &Vec3) -> Vec3 {
        self.rotation * v
    }

    pub fn apply_all(&self, points: &[Vec3]) -> Vec<Vec3> {
        points.iter().map(|p| self.apply(p)).collect()
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let r_inv = self.rotation.inverse();
        RigidTransform {
            rotation: r_inv,
            translation: -(r_inv * self.translation),
        }
    }

    pub fn quaternion(&self) -> UnitQuaternion<f64> {
        UnitQuaternion::from_rotation_matrix(&self.rotation)
    }

    /// Re-projects the rotation onto SO(3) after long chains of updates.
    pub fn renormalized(mut self) -> RigidTransform {
        self.rotation.renormalize();
        self
    }
}

/// `a ∘ b`.
pub fn compose(a: &RigidTransform, b: &RigidTransform) -> RigidTransform {
    a.compose(b)
}

pub fn invert(t: &RigidTransform) -> RigidTransform {
    t.inverse()
}

/// Unit rotation axis with an angle in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisAngle {
    pub axis: Vec3,
    pub angle: f64,
}

impl AxisAngle {
    pub fn new(axis: Vec3, angle: f64) -> Result<Self, Se3Error> {
        unit_axis(&axis)?;
        Ok(AxisAngle { axis, angle })
    }

    pub fn to_rotation(&self) -> Rotation3<f64> {
        rodrigues(&Unit::new_unchecked(self.axis), self.angle)
    }

    /// Angle in `[0, π]`; the axis is arbitrary (x) for the identity.
    pub fn from_rotation(r: &Rotation3<f64>) -> AxisAngle {
        match r.axis_angle() {
            Some((axis, angle)) => AxisAngle {
                axis: axis.into_inner(),
                angle,
            },
            None => AxisAngle {
                axis: Vec3::x(),
                angle: 0.0,
            },
        }
    }
}

/// `R = I + sin θ K + (1 − cos θ) K²` with `K = [u]×`.
pub fn rodrigues(axis: &Unit<Vec3>, angle: f64) -> Rotation3<f64> {
    let k = axis.cross_matrix();
    let m = Matrix3::identity() + k * angle.sin() + k * k * (1.0 - angle.cos());
    Rotation3::from_matrix_unchecked(m)
}

/// Exponential map from an so(3) vector.
pub fn exp_so3(w: &Vec3) -> Rotation3<f64> {
    Rotation3::new(*w)
}

/// Logarithm map to an so(3) vector with norm in `[0, π]`.
pub fn log_so3(r: &Rotation3<f64>) -> Vec3 {
    r.scaled_axis()
}

/// Rotation by `angle` about the line through `pivot` with direction `axis`.
pub fn rotation_about_line(axis: &Vec3, pivot: &Vec3, angle: f64) -> Result<RigidTransform, Se3Error> {
    let u = unit_axis(axis)?;
    let rotation = rodrigues(&u, angle);
    Ok(RigidTransform {
        rotation,
        translation: pivot - rotation * pivot,
    })
}

/// Pure translation by `s · axis`.
pub fn translation_about_line(axis: &Vec3, s: f64) -> Result<RigidTransform, Se3Error> {
    let u = unit_axis(axis)?;
    Ok(RigidTransform::from_translation(u.into_inner() * s))
}

/// Geodesic distance between two rotations in degrees, in `[0, 180]`.
///
/// Equals `arccos((tr(RaᵀRb) − 1) / 2)`; evaluated as `atan2(sin, cos)` so
/// small angles keep full precision.
pub fn geodesic_deg(a: &Rotation3<f64>, b: &Rotation3<f64>) -> f64 {
    let rel = a.matrix().transpose() * b.matrix();
    let cos = ((rel.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    let skew = Vec3::new(rel[(2, 1)] - rel[(1, 2)], rel[(0, 2)] - rel[(2, 0)], rel[(1, 0)] - rel[(0, 1)]);
    let sin = (skew.norm() / 2.0).min(1.0);
    sin.atan2(cos).to_degrees().clamp(0.0, 180.0)
}

/// Haar-uniform random rotation (normalized 4-D Gaussian quaternion).
pub fn random_rotation<R: rand::Rng + ?Sized>(rng: &mut R) -> Rotation3<f64> {
    use rand_distr::StandardNormal;
    loop {
        let q: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
        let q = nalgebra::Quaternion::new(q[0], q[1], q[2], q[3]);
        if q.norm() > 1e-6 {
            return UnitQuaternion::from_quaternion(q).to_rotation_matrix();
        }
    }
}

/// Rotation by a uniformly drawn angle in `[0, max_deg]` about a uniform axis.
pub fn random_rotation_within<R: rand::Rng + ?Sized>(rng: &mut R, max_deg: f64) -> Rotation3<f64> {
    let axis = random_rotation(rng) * Vec3::z();
    let angle = rng.random_range(0.0..=max_deg).to_radians();
    rodrigues(&Unit::new_normalize(axis), angle)
}
