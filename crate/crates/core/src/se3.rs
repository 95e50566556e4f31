//! Rigid poses, the 6D rotation view and the affine sequence normalization.
//!
//! Rotations are stored as unit quaternions. The 6D representation (first
//! two rotation-matrix columns) only appears at the refiner boundary, where
//! a pose becomes a 9-vector `[r; p]`.
//!
//! Units are millimetres, seconds and radians throughout.

use nalgebra::{Isometry3, Matrix3, Quaternion, Rotation3, Translation3, UnitQuaternion, Vector3};
use ndarray::Array2;

use crate::error::{Error, Result};

/// Tolerance on `|‖q‖ - 1|` accepted for an input quaternion.
pub const UNIT_TOLERANCE: f64 = 1e-9;

/// Default spatial scale `s_p` of the normalization map.
pub const DEFAULT_SPATIAL_SCALE: f64 = 100.0;

/// Number of channels of a pose in the refiner parameterization.
pub const POSE_CHANNELS: usize = 9;

const MIN_COLUMN_NORM: f64 = 1e-12;

/// A timestamped rigid transform. Poses with `valid == false` are gaps and
/// their rotation/translation carry no meaning.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub t: f64,
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vector3<f64>,
    pub valid: bool,
}

impl Pose {
    pub fn new(t: f64, rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Pose {
            t,
            rotation,
            translation,
            valid: true,
        }
    }

    /// Builds a pose from a raw quaternion, rejecting anything further than
    /// `tolerance` from unit norm. The stored rotation is renormalized.
    pub fn from_raw_quaternion(
        t: f64,
        q: Quaternion<f64>,
        translation: Vector3<f64>,
        valid: bool,
        tolerance: f64,
    ) -> Result<Self> {
        let norm = q.norm();
        if !norm.is_finite() || (norm - 1.0).abs() > tolerance {
            return Err(Error::invalid(format!(
                "quaternion norm {norm} is not within {tolerance} of 1"
            )));
        }
        // Already-unit input is kept bit-exact so that files round-trip.
        let rotation = if (norm - 1.0).abs() <= 4.0 * f64::EPSILON {
            UnitQuaternion::new_unchecked(q)
        } else {
            UnitQuaternion::from_quaternion(q)
        };
        Ok(Pose {
            t,
            rotation,
            translation,
            valid,
        })
    }

    /// A placeholder for a missing frame.
    pub fn missing(t: f64) -> Self {
        Pose {
            t,
            rotation: UnitQuaternion::identity(),
            translation: Vector3::zeros(),
            valid: false,
        }
    }

    pub fn from_isometry(t: f64, iso: &Isometry3<f64>) -> Self {
        Pose::new(t, iso.rotation, iso.translation.vector)
    }

    pub fn isometry(&self) -> Isometry3<f64> {
        Isometry3::from_parts(Translation3::from(self.translation), self.rotation)
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn to_vector9(&self) -> PoseVector9 {
        PoseVector9 {
            r: rotation_to_6d(&self.rotation),
            p: self.translation,
        }
    }

    pub fn invalidated(mut self) -> Self {
        self.valid = false;
        self
    }
}

/// An ordered pose trajectory with strictly increasing timestamps.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseSequence {
    poses: Vec<Pose>,
}

impl PoseSequence {
    pub fn new(poses: Vec<Pose>) -> Result<Self> {
        if poses.is_empty() {
            return Err(Error::invalid("pose sequence must contain at least one pose"));
        }
        for (i, w) in poses.windows(2).enumerate() {
            if !(w[1].t > w[0].t) {
                return Err(Error::invalid(format!(
                    "timestamps not strictly increasing at index {}: {} then {}",
                    i + 1,
                    w[0].t,
                    w[1].t
                )));
            }
        }
        Ok(PoseSequence { poses })
    }

    pub fn poses(&self) -> &[Pose] {
        &self.poses
    }

    pub fn into_poses(self) -> Vec<Pose> {
        self.poses
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn get(&self, i: usize) -> Option<&Pose> {
        self.poses.get(i)
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Pose> {
        self.poses.iter()
    }

    pub fn first_valid(&self) -> Option<&Pose> {
        self.poses.iter().find(|p| p.valid)
    }

    pub fn valid_count(&self) -> usize {
        self.poses.iter().filter(|p| p.valid).count()
    }

    pub fn timestamps(&self) -> Vec<f64> {
        self.poses.iter().map(|p| p.t).collect()
    }

    /// Replaces pose `i` keeping the timestamp ordering intact.
    pub fn set_validity(&mut self, i: usize, valid: bool) {
        self.poses[i].valid = valid;
    }

    /// Median sampling interval, or `None` for a single pose.
    pub fn median_interval(&self) -> Option<f64> {
        if self.poses.len() < 2 {
            return None;
        }
        let mut dts: Vec<f64> = self.poses.windows(2).map(|w| w[1].t - w[0].t).collect();
        dts.sort_by(|a, b| a.total_cmp(b));
        Some(dts[dts.len() / 2])
    }
}

impl std::ops::Index<usize> for PoseSequence {
    type Output = Pose;
    fn index(&self, i: usize) -> &Pose {
        &self.poses[i]
    }
}

/// A pose as `[r; p]`: the first two rotation-matrix columns followed by the
/// translation in millimetres.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseVector9 {
    pub r: [f64; 6],
    pub p: Vector3<f64>,
}

impl PoseVector9 {
    pub fn to_array(&self) -> [f64; 9] {
        let mut out = [0.0; 9];
        out[..6].copy_from_slice(&self.r);
        out[6] = self.p.x;
        out[7] = self.p.y;
        out[8] = self.p.z;
        out
    }

    pub fn from_array(a: &[f64]) -> Self {
        let mut r = [0.0; 6];
        r.copy_from_slice(&a[..6]);
        PoseVector9 {
            r,
            p: Vector3::new(a[6], a[7], a[8]),
        }
    }

    /// Re-projects the rotation channels onto SO(3).
    pub fn to_pose(&self, t: f64) -> Result<Pose> {
        Ok(Pose::new(t, sixd_to_rot(&self.r)?, self.p))
    }
}

/// The affine map `X̃ = Λ⁻¹ (X − x̄_ref)` with `Λ = diag(I₆, s_p I₃)` and
/// `x̄_ref = [0₆; p_ref]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizationParams {
    s_p: f64,
    p_ref: Vector3<f64>,
}

impl NormalizationParams {
    pub fn new(s_p: f64, p_ref: Vector3<f64>) -> Result<Self> {
        if !(s_p > 0.0) || !s_p.is_finite() {
            return Err(Error::invalid(format!("spatial scale must be positive, got {s_p}")));
        }
        Ok(NormalizationParams { s_p, p_ref })
    }

    /// Reference position taken from the first valid pose.
    pub fn from_sequence(seq: &PoseSequence, s_p: f64) -> Result<Self> {
        let first = seq
            .first_valid()
            .ok_or_else(|| Error::invalid("sequence has no valid pose"))?;
        Self::new(s_p, first.translation)
    }

    pub fn s_p(&self) -> f64 {
        self.s_p
    }

    pub fn p_ref(&self) -> Vector3<f64> {
        self.p_ref
    }
}

/// Serializable rigid transform: quaternion `[w, x, y, z]` and translation in mm.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RigidTransform {
    pub rotation: [f64; 4],
    pub translation: [f64; 3],
}

impl RigidTransform {
    pub fn identity() -> Self {
        RigidTransform {
            rotation: [1.0, 0.0, 0.0, 0.0],
            translation: [0.0; 3],
        }
    }

    pub fn from_isometry(iso: &Isometry3<f64>) -> Self {
        let q = iso.rotation.quaternion();
        let t = iso.translation.vector;
        RigidTransform {
            rotation: [q.w, q.i, q.j, q.k],
            translation: [t.x, t.y, t.z],
        }
    }

    pub fn to_isometry(&self) -> Isometry3<f64> {
        let [w, x, y, z] = self.rotation;
        Isometry3::from_parts(
            Translation3::new(self.translation[0], self.translation[1], self.translation[2]),
            UnitQuaternion::from_quaternion(Quaternion::new(w, x, y, z)),
        )
    }

    /// Row-major 4×4 homogeneous matrix.
    pub fn to_matrix_rows(&self) -> [[f64; 4]; 4] {
        let m = self.to_isometry().to_homogeneous();
        let mut rows = [[0.0; 4]; 4];
        for (r, row) in rows.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = m[(r, c)];
            }
        }
        rows
    }

    pub fn from_matrix_rows(rows: &[[f64; 4]; 4]) -> Result<Self> {
        let mut rot = Matrix3::zeros();
        for r in 0..3 {
            for c in 0..3 {
                rot[(r, c)] = rows[r][c];
            }
        }
        let err = (rot.transpose() * rot - Matrix3::identity()).abs().max();
        if err > 1e-6 || rot.determinant() < 0.0 {
            return Err(Error::invalid("4x4 matrix does not hold a proper rotation"));
        }
        let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(rot));
        let iso = Isometry3::from_parts(
            Translation3::new(rows[0][3], rows[1][3], rows[2][3]),
            q,
        );
        Ok(Self::from_isometry(&iso))
    }
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

/// First two columns of the rotation matrix of the unit quaternion `q`.
pub fn rotation_to_6d(q: &UnitQuaternion<f64>) -> [f64; 6] {
    let m = q.to_rotation_matrix().into_inner();
    [m[(0, 0)], m[(1, 0)], m[(2, 0)], m[(0, 1)], m[(1, 1)], m[(2, 1)]]
}

/// 6D view of a raw quaternion; fails when `q` is not unit within
/// [`UNIT_TOLERANCE`].
pub fn rot_to_6d(q: &Quaternion<f64>) -> Result<[f64; 6]> {
    let norm = q.norm();
    if !norm.is_finite() || (norm - 1.0).abs() > UNIT_TOLERANCE {
        return Err(Error::invalid(format!("quaternion norm {norm} is not unit")));
    }
    Ok(rotation_to_6d(&UnitQuaternion::new_unchecked(*q)))
}

/// Gram–Schmidt orthonormalization of the two 3-columns held in `r`.
///
/// `b1 = a1/‖a1‖`, `b2 = normalize(a2 − (b1·a2) b1)`, `b3 = b1 × b2`.
pub fn gram_schmidt(r: &[f64; 6]) -> Result<Matrix3<f64>> {
    let a1 = Vector3::new(r[0], r[1], r[2]);
    let a2 = Vector3::new(r[3], r[4], r[5]);
    let n1 = a1.norm();
    if !(n1 > MIN_COLUMN_NORM) {
        return Err(Error::degenerate(format!("first 6D column has norm {n1}")));
    }
    let b1 = a1 / n1;
    let u2 = a2 - b1 * b1.dot(&a2);
    let n2 = u2.norm();
    if !(n2 > MIN_COLUMN_NORM.max(1e-10 * a2.norm())) {
        return Err(Error::degenerate("6D columns are parallel or the second is zero"));
    }
    let b2 = u2 / n2;
    let b3 = b1.cross(&b2);
    Ok(Matrix3::from_columns(&[b1, b2, b3]))
}

/// Rotation recovered from a (possibly non-orthonormal) 6D vector.
pub fn sixd_to_rot(r: &[f64; 6]) -> Result<UnitQuaternion<f64>> {
    let m = gram_schmidt(r)?;
    Ok(UnitQuaternion::from_rotation_matrix(
        &Rotation3::from_matrix_unchecked(m),
    ))
}

/// Angle of `M = R1ᵀ R2`, i.e. `acos((tr M − 1)/2)`, evaluated as
/// `atan2(‖vee(M − Mᵀ)‖/2, (tr M − 1)/2)` so that it stays accurate near 0
/// and π and is exactly 0 for identical inputs.
pub fn geodesic_distance_matrices(r1: &Matrix3<f64>, r2: &Matrix3<f64>) -> f64 {
    let m = r1.transpose() * r2;
    let cos = (m.trace() - 1.0) / 2.0;
    let sin = Vector3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]).norm() / 2.0;
    sin.atan2(cos)
}

/// Geodesic distance on SO(3) in radians.
pub fn geodesic_distance(r1: &UnitQuaternion<f64>, r2: &UnitQuaternion<f64>) -> f64 {
    geodesic_distance_matrices(
        r1.to_rotation_matrix().matrix(),
        r2.to_rotation_matrix().matrix(),
    )
}

/// Stacks the vectors into a `9 × L` array and applies the normalization.
/// Rotation channels pass through unscaled.
pub fn normalize_sequence(xs: &[PoseVector9], params: &NormalizationParams) -> Array2<f64> {
    let mut out = Array2::zeros((POSE_CHANNELS, xs.len()));
    for (j, x) in xs.iter().enumerate() {
        for c in 0..6 {
            out[(c, j)] = x.r[c];
        }
        for c in 0..3 {
            out[(6 + c, j)] = (x.p[c] - params.p_ref[c]) / params.s_p;
        }
    }
    out
}

/// Inverse of [`normalize_sequence`]. Each column's rotation channels must be
/// recoverable by Gram–Schmidt.
pub fn denormalize_sequence(
    x: &Array2<f64>,
    params: &NormalizationParams,
) -> Result<Vec<PoseVector9>> {
    if x.nrows() != POSE_CHANNELS {
        return Err(Error::invalid(format!(
            "expected {POSE_CHANNELS} channels, got {}",
            x.nrows()
        )));
    }
    x.columns()
        .into_iter()
        .map(|col| {
            let mut r = [0.0; 6];
            for c in 0..6 {
                r[c] = col[c];
            }
            gram_schmidt(&r)?;
            let p = Vector3::new(
                params.s_p * col[6] + params.p_ref.x,
                params.s_p * col[7] + params.p_ref.y,
                params.s_p * col[8] + params.p_ref.z,
            );
            Ok(PoseVector9 { r, p })
        })
        .collect()
}

/// Relative rotation error expressed as (roll, pitch, yaw) in radians.
pub fn relative_euler(estimated: &UnitQuaternion<f64>, reference: &UnitQuaternion<f64>) -> [f64; 3] {
    let (r, p, y) = (reference.inverse() * estimated).euler_angles();
    [r, p, y]
}
