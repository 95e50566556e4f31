use std::path::Path;

use nalgebra::{Isometry3, Matrix3, Point3, Rotation3, Translation3, UnitQuaternion, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{read_json, write_json};
use crate::se3::RigidTransform;

/// Below this image distance between the outer wires an N is unusable.
pub const MIN_OUTER_SPAN_PX: f64 = 2.0;

/// RMS residual (mm) above which a solve is flagged as a poor fit.
pub const POOR_FIT_RMS_MM: f64 = 2.0;

/// One N of the phantom, in phantom coordinates (mm). The diagonal runs
/// from a point on `wire_a` to a point on `wire_c`; the two outer wires are
/// parallel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NWire {
    pub wire_a: [[f64; 3]; 2],
    pub diagonal: [[f64; 3]; 2],
    pub wire_c: [[f64; 3]; 2],
}

impl NWire {
    pub fn segments(&self) -> [[[f64; 3]; 2]; 3] {
        [self.wire_a, self.diagonal, self.wire_c]
    }
}

/// Pixel intersections of one image with the wires of every N, ordered
/// `[A, B, C]` (outer, diagonal, outer) per N.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NWireObservation {
    pub image_points: Vec<[[f64; 2]; 3]>,
    /// Probe pose in the camera frame.
    pub probe_pose: RigidTransform,
    /// Phantom pose in the camera frame.
    pub phantom_pose: RigidTransform,
}

/// A calibration session: the phantom's wires are shared by every image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NWireDataset {
    pub wires: Vec<NWire>,
    /// mm per pixel along u and v.
    pub pixel_spacing: [f64; 2],
    pub observations: Vec<NWireObservation>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpatialCalibration {
    /// Image plane (mm, z = 0) to probe frame.
    pub transform: RigidTransform,
    pub pixel_spacing: [f64; 2],
    pub rms_residual: f64,
    pub observation_count: usize,
    pub poor_fit: bool,
}

#[derive(Serialize, Deserialize)]
struct CalibrationFile {
    transform: [[f64; 4]; 4],
    pixel_spacing: [f64; 2],
    rms_residual: f64,
    observation_count: usize,
}

impl SpatialCalibration {
    pub fn isometry(&self) -> Isometry3<f64> {
        self.transform.to_isometry()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_json(
            path,
            &CalibrationFile {
                transform: self.transform.to_matrix_rows(),
                pixel_spacing: self.pixel_spacing,
                rms_residual: self.rms_residual,
                observation_count: self.observation_count,
            },
        )
    }

    pub fn read(path: &Path) -> Result<Self> {
        let f: CalibrationFile = read_json(path)?;
        if !(f.pixel_spacing[0] > 0.0 && f.pixel_spacing[1] > 0.0) {
            return Err(Error::invalid("pixel_spacing must be positive"));
        }
        Ok(SpatialCalibration {
            transform: RigidTransform::from_matrix_rows(&f.transform)?,
            pixel_spacing: f.pixel_spacing,
            rms_residual: f.rms_residual,
            observation_count: f.observation_count,
            poor_fit: f.rms_residual > POOR_FIT_RMS_MM,
        })
    }
}

fn v3(p: &[f64; 3]) -> Vector3<f64> {
    Vector3::new(p[0], p[1], p[2])
}

/// Phantom-frame position of the diagonal-wire intersection. The fraction
/// α = |AB|/|AC| is measured in mm on the image (B projected onto AC) and
/// carried to the diagonal by similar triangles.
pub fn locate_middle_wire(points: &[[f64; 2]; 3], wire: &NWire, pixel_spacing: [f64; 2]) -> Result<Vector3<f64>> {
    let px = |p: &[f64; 2]| Vector2::new(p[0], p[1]);
    if (px(&points[2]) - px(&points[0])).norm() < MIN_OUTER_SPAN_PX {
        return Err(Error::degenerate("outer wire intersections closer than 2 px"));
    }
    let mm = |p: &[f64; 2]| Vector2::new(p[0] * pixel_spacing[0], p[1] * pixel_spacing[1]);
    let (a, b, c) = (mm(&points[0]), mm(&points[1]), mm(&points[2]));
    let ac = c - a;
    let alpha = (b - a).dot(&ac) / ac.norm_squared();
    let (d0, d1) = (v3(&wire.diagonal[0]), v3(&wire.diagonal[1]));
    Ok(d0 + alpha * (d1 - d0))
}

/// Closed-form least-squares rigid transform with `dst ≈ R·src + t`.
pub fn absolute_orientation(src: &[Vector3<f64>], dst: &[Vector3<f64>]) -> Result<Isometry3<f64>> {
    if src.len() != dst.len() || src.len() < 3 {
        return Err(Error::InsufficientData("need at least three correspondences".into()));
    }
    let n = src.len() as f64;
    let cs = src.iter().sum::<Vector3<f64>>() / n;
    let cd = dst.iter().sum::<Vector3<f64>>() / n;
    for (pts, c, name) in [(src, cs, "source"), (dst, cd, "target")] {
        let spread = pts.iter().fold(Matrix3::zeros(), |m, p| m + (p - c) * (p - c).transpose());
        let sv = spread.symmetric_eigenvalues();
        let mut s: Vec<f64> = sv.iter().copied().collect();
        s.sort_by(|a, b| b.total_cmp(a));
        if !(s[0] > 0.0) || s[1] <= 1e-12 * s[0] {
            return Err(Error::degenerate(format!("{name} points are collinear")));
        }
    }
    let h = src
        .iter()
        .zip(dst)
        .fold(Matrix3::zeros(), |m, (s, d)| m + (s - cs) * (d - cd).transpose());
    let svd = h.svd(true, true);
    let (u, v_t) = (svd.u.expect("requested"), svd.v_t.expect("requested"));
    let v = v_t.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let r = v * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * u.transpose();
    let rot = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(r));
    let t = cd - rot * cs;
    Ok(Isometry3::from_parts(Translation3::from(t), rot))
}

/// Image-plane points (mm) and the matching probe-frame targets.
pub fn correspondences(data: &NWireDataset) -> Result<(Vec<Vector3<f64>>, Vec<Vector3<f64>>)> {
    let [su, sv] = data.pixel_spacing;
    if !(su > 0.0 && sv > 0.0) {
        return Err(Error::invalid("pixel_spacing must be positive"));
    }
    let mut src = Vec::new();
    let mut dst = Vec::new();
    for (k, obs) in data.observations.iter().enumerate() {
        if obs.image_points.len() != data.wires.len() {
            return Err(Error::invalid(format!(
                "observation {k} has {} point triples for {} wires",
                obs.image_points.len(),
                data.wires.len()
            )));
        }
        let probe_from_phantom = obs.probe_pose.to_isometry().inverse() * obs.phantom_pose.to_isometry();
        for (pts, wire) in obs.image_points.iter().zip(&data.wires) {
            let x = locate_middle_wire(pts, wire, data.pixel_spacing)?;
            src.push(Vector3::new(su * pts[1][0], sv * pts[1][1], 0.0));
            dst.push((probe_from_phantom * Point3::from(x)).coords);
        }
    }
    Ok((src, dst))
}

pub fn rms_residual(iso: &Isometry3<f64>, src: &[Vector3<f64>], dst: &[Vector3<f64>]) -> f64 {
    let ss: f64 = src
        .iter()
        .zip(dst)
        .map(|(s, d)| ((iso * Point3::from(*s)).coords - d).norm_squared())
        .sum();
    (ss / src.len() as f64).sqrt()
}

/// Solves for the image→probe transform from N-wire observations.
pub fn solve_spatial_calibration(data: &NWireDataset) -> Result<SpatialCalibration> {
    let (src, dst) = correspondences(data)?;
    let iso = absolute_orientation(&src, &dst)?;
    let rms = rms_residual(&iso, &src, &dst);
    let poor_fit = rms > POOR_FIT_RMS_MM;
    if poor_fit {
        log::warn!("spatial calibration residual {rms:.3} mm exceeds {POOR_FIT_RMS_MM} mm");
    }
    Ok(SpatialCalibration {
        transform: RigidTransform::from_isometry(&iso),
        pixel_spacing: data.pixel_spacing,
        rms_residual: rms,
        observation_count: data.observations.len(),
        poor_fit,
    })
}
