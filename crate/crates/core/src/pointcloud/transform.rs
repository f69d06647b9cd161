use nalgebra::{Matrix3, Point3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

const ORTHO_TOL: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum TransformError {
    #[error("rotation is not orthonormal (max |RᵀR − I| = {0:e})")]
    NotOrthonormal(f64),
    #[error("rotation determinant is {0}, expected 1")]
    NotProper(f64),
    #[error("transform has non-finite entries")]
    NonFinite,
}

/// Rotation followed by translation: `p ↦ R·p + t`.
///
/// Euler angles use the intrinsic Z·Y·X product `R = R_z(θz)·R_y(θy)·R_x(θx)`
/// in a right-handed, y-up frame with the camera looking down −z.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TransformRepr", into = "TransformRepr")]
pub struct RigidTransform {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl RigidTransform {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, TransformError> {
        if rotation
            .iter()
            .chain(translation.iter())
            .any(|v| !v.is_finite())
        {
            return Err(TransformError::NonFinite);
        }
        let err = (rotation.transpose() * rotation - Matrix3::identity()).amax();
        if err > ORTHO_TOL {
            return Err(TransformError::NotOrthonormal(err));
        }
        let det = rotation.determinant();
        if (det - 1.0).abs() > ORTHO_TOL {
            return Err(TransformError::NotProper(det));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub(crate) fn from_parts_unchecked(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Self::from_parts_unchecked(Matrix3::identity(), Vector3::zeros())
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self::from_parts_unchecked(Matrix3::identity(), translation)
    }

    /// Builds `R_z(rz)·R_y(ry)·R_x(rx)` (radians) with translation `t`.
    pub fn from_euler(rx: f64, ry: f64, rz: f64, translation: Vector3<f64>) -> Self {
        Self::from_parts_unchecked(rot_z(rz) * rot_y(ry) * rot_x(rx), translation)
    }

    /// Inverse of [`RigidTransform::from_euler`], returning `(rx, ry, rz)` in
    /// radians. Unique while `|ry| < 90°`.
    pub fn euler_angles(&self) -> (f64, f64, f64) {
        let r = &self.rotation;
        let ry = (-r[(2, 0)]).clamp(-1.0, 1.0).asin();
        let rx = r[(2, 1)].atan2(r[(2, 2)]);
        let rz = r[(1, 0)].atan2(r[(0, 0)]);
        (rx, ry, rz)
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn apply(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.rotation * p.coords + self.translation)
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        Self::from_parts_unchecked(
            self.rotation * other.rotation,
            self.rotation * other.translation + self.translation,
        )
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        Self::from_parts_unchecked(rt, -(rt * self.translation))
    }

    /// Least-squares rigid map taking `src[i]` onto `dst[i]` (Kabsch/Horn via
    /// SVD of the cross-covariance). `None` for empty or mismatched input.
    pub fn best_fit(src: &[Point3<f64>], dst: &[Point3<f64>]) -> Option<Self> {
        if src.is_empty() || src.len() != dst.len() {
            return None;
        }
        let n = src.len() as f64;
        let cs = src.iter().fold(Vector3::zeros(), |a, p| a + p.coords) / n;
        let cd = dst.iter().fold(Vector3::zeros(), |a, p| a + p.coords) / n;
        let mut h = Matrix3::zeros();
        for (s, d) in src.iter().zip(dst) {
            h += (s.coords - cs) * (d.coords - cd).transpose();
        }
        let svd = h.svd(true, true);
        let (u, v_t) = (svd.u?, svd.v_t?);
        let v = v_t.transpose();
        let mut fix = Matrix3::identity();
        if (v * u.transpose()).determinant() < 0.0 {
            fix[(2, 2)] = -1.0;
        }
        let rotation = v * fix * u.transpose();
        let translation = cd - rotation * cs;
        if rotation
            .iter()
            .chain(translation.iter())
            .any(|x| !x.is_finite())
        {
            return None;
        }
        Some(Self::from_parts_unchecked(rotation, translation))
    }

    /// Angle of the rotation part in radians, in `[0, π]`.
    pub fn rotation_angle(&self) -> f64 {
        ((self.rotation.trace() - 1.0) / 2.0)
            .clamp(-1.0, 1.0)
            .acos()
    }
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

fn rot_x(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

fn rot_y(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

fn rot_z(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

#[derive(Serialize, Deserialize)]
struct TransformRepr {
    rotation: [[f64; 3]; 3],
    translation: [f64; 3],
}

impl From<RigidTransform> for TransformRepr {
    fn from(t: RigidTransform) -> Self {
        let r = t.rotation;
        TransformRepr {
            rotation: [0, 1, 2].map(|i| [r[(i, 0)], r[(i, 1)], r[(i, 2)]]),
            translation: [t.translation.x, t.translation.y, t.translation.z],
        }
    }
}

impl TryFrom<TransformRepr> for RigidTransform {
    type Error = TransformError;

    fn try_from(repr: TransformRepr) -> Result<Self, Self::Error> {
        let r = repr.rotation;
        RigidTransform::new(
            Matrix3::new(
                r[0][0], r[0][1], r[0][2], r[1][0], r[1][1], r[1][2], r[2][0], r[2][1], r[2][2],
            ),
            Vector3::from(repr.translation),
        )
    }
}
