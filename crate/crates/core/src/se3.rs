//! Rigid transforms in SE(3) and the pose distance used by the quantizer.
//!
//! A [`Pose4`] is a camera-to-world matrix
//!
//! ```text
//! ┌       ┐
//! │ R   p │   R ∈ SO(3), p ∈ ℝ³
//! │ 0   1 │
//! └       ┘
//! ```
//!
//! stored as a 4×4 matrix whose bottom row is exactly `[0, 0, 0, 1]`.

use nalgebra::{Matrix3, Matrix4, Rotation3, Unit, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance on `‖RᵀR − I‖_F` and `|det R − 1|`.
pub const RIGIDITY_TOL: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PoseError {
    #[error("rotation block is not orthonormal with det +1 (orthogonality error {ortho_err:.3e}, det {det})")]
    NotRigid { ortho_err: f64, det: f64 },
    #[error("bottom row must be exactly [0, 0, 0, 1], got {0:?}")]
    BadBottomRow([f64; 4]),
    #[error("expected 16 matrix entries, got {0}")]
    BadLength(usize),
    #[error("distance weights must be finite, nonnegative and not both zero")]
    BadWeights,
}

/// A validated 4×4 rigid transform.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Pose4 {
    m: Matrix4<f64>,
}

impl TryFrom<Vec<f64>> for Pose4 {
    type Error = PoseError;

    fn try_from(v: Vec<f64>) -> Result<Self, PoseError> {
        Pose4::from_slice(&v)
    }
}

impl From<Pose4> for Vec<f64> {
    fn from(p: Pose4) -> Self {
        p.to_row_major().to_vec()
    }
}

/// Checks every rigid-transform invariant on a row-major 4×4 matrix.
pub fn validate_pose(m: &[f64; 16]) -> Result<Pose4, PoseError> {
    let bottom = [m[12], m[13], m[14], m[15]];
    if bottom != [0.0, 0.0, 0.0, 1.0] {
        return Err(PoseError::BadBottomRow(bottom));
    }
    let pose = Pose4 {
        m: Matrix4::from_row_slice(m),
    };
    let r = pose.rotation();
    let ortho_err = (r.transpose() * r - Matrix3::identity()).norm();
    let det = r.determinant();
    if !(ortho_err <= RIGIDITY_TOL && (det - 1.0).abs() <= RIGIDITY_TOL) {
        return Err(PoseError::NotRigid { ortho_err, det });
    }
    Ok(pose)
}

impl Pose4 {
    pub fn identity() -> Self {
        Pose4 { m: Matrix4::identity() }
    }

    /// Validates a row-major slice of 16 entries.
    pub fn from_slice(v: &[f64]) -> Result<Self, PoseError> {
        let arr: &[f64; 16] = v.try_into().map_err(|_| PoseError::BadLength(v.len()))?;
        validate_pose(arr)
    }

    /// Builds `[R p; 0 1]`. The rotation is validated.
    pub fn from_parts(r: &Matrix3<f64>, p: &Vector3<f64>) -> Result<Self, PoseError> {
        let mut m = [0.0; 16];
        for i in 0..3 {
            for j in 0..3 {
                m[4 * i + j] = r[(i, j)];
            }
            m[4 * i + 3] = p[i];
        }
        m[15] = 1.0;
        validate_pose(&m)
    }

    /// Assembles a pose from parts already known to be rigid (products and
    /// inverses of valid poses). No validation.
    fn from_parts_unchecked(r: &Matrix3<f64>, p: &Vector3<f64>) -> Self {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(r);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(p);
        Pose4 { m }
    }

    pub fn translation_only(x: f64, y: f64, z: f64) -> Self {
        Self::from_parts_unchecked(&Matrix3::identity(), &Vector3::new(x, y, z))
    }

    /// Pure rotation by `angle` radians about `axis` (normalized internally).
    pub fn rotation_about(axis: Vector3<f64>, angle: f64) -> Self {
        let rot = Rotation3::from_axis_angle(&Unit::new_normalize(axis), angle);
        Self::from_parts_unchecked(rot.matrix(), &Vector3::zeros())
    }

    pub fn rot_x(angle: f64) -> Self {
        Self::rotation_about(Vector3::x(), angle)
    }

    pub fn rot_y(angle: f64) -> Self {
        Self::rotation_about(Vector3::y(), angle)
    }

    pub fn rot_z(angle: f64) -> Self {
        Self::rotation_about(Vector3::z(), angle)
    }

    pub fn matrix(&self) -> &Matrix4<f64> {
        &self.m
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        self.m.fixed_view::<3, 3>(0, 0).into_owned()
    }

    pub fn translation(&self) -> Vector3<f64> {
        self.m.fixed_view::<3, 1>(0, 3).into_owned()
    }

    /// Third rotation column: the camera viewing axis in world coordinates.
    pub fn view_axis(&self) -> Vector3<f64> {
        self.m.fixed_view::<3, 1>(0, 2).into_owned()
    }

    pub fn to_row_major(&self) -> [f64; 16] {
        let mut out = [0.0; 16];
        for i in 0..4 {
            for j in 0..4 {
                out[4 * i + j] = self.m[(i, j)];
            }
        }
        out
    }

    /// `self · other`.
    pub fn compose(&self, other: &Pose4) -> Pose4 {
        let r = self.rotation() * other.rotation();
        let p = self.rotation() * other.translation() + self.translation();
        Pose4::from_parts_unchecked(&r, &p)
    }

    /// Rigid inverse `[Rᵀ, −Rᵀp]`.
    pub fn inverse(&self) -> Pose4 {
        let rt = self.rotation().transpose();
        let p = -(rt * self.translation());
        Pose4::from_parts_unchecked(&rt, &p)
    }

    /// Multiplies the translation by `c`, leaving the rotation untouched.
    pub fn scale_translation(&self, c: f64) -> Pose4 {
        Pose4::from_parts_unchecked(&self.rotation(), &(self.translation() * c))
    }
}

/// `C_curr⁻¹ · C_next`: the motion of the next camera expressed in the frame
/// of the current one.
pub fn relative_transform(c_curr: &Pose4, c_next: &Pose4) -> Pose4 {
    c_curr.inverse().compose(c_next)
}

/// Geodesic angle between two rotations, `arccos((tr(R1ᵀR2) − 1) / 2)` in `[0, π]`.
///
/// For small angles the same quantity is evaluated as
/// `2·asin(‖R1 − R2‖_F / 2√2)`, since arccos near 1 loses half the digits.
pub fn rotation_geodesic_angle(r1: &Matrix3<f64>, r2: &Matrix3<f64>) -> f64 {
    let c = ((r1.transpose() * r2).trace() - 1.0) / 2.0;
    if c > 0.0 {
        let half_chord = (r1 - r2).norm() / (2.0 * std::f64::consts::SQRT_2);
        return 2.0 * half_chord.min(1.0).asin();
    }
    // Round-off can push the cosine a hair outside [-1, 1].
    c.clamp(-1.0, 1.0).acos()
}

/// Weights of the translational and rotational terms in [`se3_distance`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawWeights", into = "RawWeights")]
pub struct Se3DistanceWeights {
    w_translation: f64,
    w_rotation: f64,
}

#[derive(Serialize, Deserialize)]
struct RawWeights {
    w_translation: f64,
    w_rotation: f64,
}

impl TryFrom<RawWeights> for Se3DistanceWeights {
    type Error = PoseError;
    fn try_from(r: RawWeights) -> Result<Self, PoseError> {
        Se3DistanceWeights::new(r.w_translation, r.w_rotation)
    }
}

impl From<Se3DistanceWeights> for RawWeights {
    fn from(w: Se3DistanceWeights) -> Self {
        RawWeights {
            w_translation: w.w_translation,
            w_rotation: w.w_rotation,
        }
    }
}

impl Se3DistanceWeights {
    pub fn new(w_translation: f64, w_rotation: f64) -> Result<Self, PoseError> {
        let ok = |w: f64| w.is_finite() && w >= 0.0;
        if !ok(w_translation) || !ok(w_rotation) || (w_translation == 0.0 && w_rotation == 0.0) {
            return Err(PoseError::BadWeights);
        }
        Ok(Se3DistanceWeights {
            w_translation,
            w_rotation,
        })
    }

    pub fn translation(&self) -> f64 {
        self.w_translation
    }

    pub fn rotation(&self) -> f64 {
        self.w_rotation
    }
}

impl Default for Se3DistanceWeights {
    fn default() -> Self {
        Se3DistanceWeights {
            w_translation: 1.0,
            w_rotation: 1.0,
        }
    }
}

/// `w_t·‖p1 − p2‖ + w_r·∠(R1, R2)`.
pub fn se3_distance(t1: &Pose4, t2: &Pose4, w: &Se3DistanceWeights) -> f64 {
    let dp = (t1.translation() - t2.translation()).norm();
    let dr = rotation_geodesic_angle(&t1.rotation(), &t2.rotation());
    w.w_translation * dp + w.w_rotation * dr
}
