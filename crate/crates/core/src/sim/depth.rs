//! Simulated segmenter + depth observation of the probe.

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::se3::Pose;
use crate::tracking::ProbeModel;

/// Pinhole depth-camera intrinsics plus the sensor size in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    #[serde(default = "default_width")]
    pub width: u32,
    #[serde(default = "default_height")]
    pub height: u32,
}

fn default_width() -> u32 {
    640
}

fn default_height() -> u32 {
    480
}

impl Default for CameraIntrinsics {
    fn default() -> Self {
        CameraIntrinsics {
            fx: 600.0,
            fy: 600.0,
            cx: 319.5,
            cy: 239.5,
            width: default_width(),
            height: default_height(),
        }
    }
}

impl CameraIntrinsics {
    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::invalid("focal lengths must be positive"));
        }
        Ok(())
    }

    /// `d · K⁻¹ (u, v, 1)ᵀ`.
    pub fn back_project(&self, u: f64, v: f64, depth: f64) -> Vector3<f64> {
        Vector3::new(
            depth * (u - self.cx) / self.fx,
            depth * (v - self.cy) / self.fy,
            depth,
        )
    }
}

/// A rectangular window of a depth image, millimetres.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub u0: u32,
    pub v0: u32,
    pub width: u32,
    pub height: u32,
    pub data: Vec<f64>,
}

impl DepthMap {
    pub fn get(&self, u: u32, v: u32) -> Option<f64> {
        if u < self.u0 || v < self.v0 || u >= self.u0 + self.width || v >= self.v0 + self.height {
            return None;
        }
        let i = ((v - self.v0) * self.width + (u - self.u0)) as usize;
        Some(self.data[i])
    }
}

/// Segmenter mask plus aligned depth, and the centroid they encode.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthObservation {
    pub centroid: Vector3<f64>,
    pub mask: Vec<(u32, u32)>,
    pub depth: DepthMap,
}

const PATCH_HALF: i64 = 4;

/// Observes the probe at its ground-truth pose. The returned mask/depth patch
/// back-projects to exactly `centroid`, which is the model centroid plus
/// isotropic Gaussian noise of `noise_sigma` mm per axis.
pub fn observe_depth_centroid(
    gt_pose: &Pose,
    probe: &ProbeModel,
    intrinsics: &CameraIntrinsics,
    noise_sigma: f64,
    rng: &mut impl Rng,
) -> Result<DepthObservation> {
    let mut c = gt_pose.transform_point(&Vector3::from(probe.centroid_offset));
    if noise_sigma > 0.0 {
        let n = Normal::new(0.0, noise_sigma).map_err(|e| Error::invalid(e.to_string()))?;
        c += Vector3::new(n.sample(rng), n.sample(rng), n.sample(rng));
    }
    if !(c.z > 0.0) {
        return Err(Error::NoObservation("probe is behind the camera".into()));
    }
    let u = intrinsics.fx * c.x / c.z + intrinsics.cx;
    let v = intrinsics.fy * c.y / c.z + intrinsics.cy;
    let (ur, vr) = (u.round() as i64, v.round() as i64);
    if ur - PATCH_HALF < 0
        || vr - PATCH_HALF < 0
        || ur + PATCH_HALF >= intrinsics.width as i64
        || vr + PATCH_HALF >= intrinsics.height as i64
    {
        return Err(Error::NoObservation("probe is outside the camera frustum".into()));
    }

    // Depth d_i = z (1 + α du + β dv) over a symmetric patch keeps the mean
    // depth at z and shifts the mean ray by α·E[du²], β·E[dv²].
    let side = 2 * PATCH_HALF + 1;
    let second_moment =
        (-PATCH_HALF..=PATCH_HALF).map(|d| (d * d) as f64).sum::<f64>() / side as f64;
    let alpha = (u - ur as f64) / second_moment;
    let beta = (v - vr as f64) / second_moment;

    let mut mask = Vec::with_capacity((side * side) as usize);
    let mut data = Vec::with_capacity((side * side) as usize);
    for dv in -PATCH_HALF..=PATCH_HALF {
        for du in -PATCH_HALF..=PATCH_HALF {
            mask.push(((ur + du) as u32, (vr + dv) as u32));
            data.push(c.z * (1.0 + alpha * du as f64 + beta * dv as f64));
        }
    }
    Ok(DepthObservation {
        centroid: c,
        mask,
        depth: DepthMap {
            u0: (ur - PATCH_HALF) as u32,
            v0: (vr - PATCH_HALF) as u32,
            width: side as u32,
            height: side as u32,
            data,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tracking::{visual_centroid, DetectorConfig};
    use nalgebra::UnitQuaternion;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn probe() -> ProbeModel {
        ProbeModel::default()
    }

    fn pose_at(p: Vector3<f64>) -> Pose {
        Pose::new(0.0, UnitQuaternion::from_euler_angles(0.1, 0.2, 0.3), p)
    }

    #[test]
    fn noiseless_observation_reproduces_model_centroid() {
        let k = CameraIntrinsics::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pose = pose_at(Vector3::new(37.3, -21.9, 640.0));
        let obs = observe_depth_centroid(&pose, &probe(), &k, 0.0, &mut rng).unwrap();
        let expected = pose.transform_point(&Vector3::from(probe().centroid_offset));
        assert!((obs.centroid - expected).norm() < 1e-12);
        let c = visual_centroid(&obs.mask, &obs.depth, &k, &DetectorConfig::default()).unwrap();
        assert!((c - expected).norm() < 1e-9, "{}", (c - expected).norm());
    }

    #[test]
    fn probe_behind_camera_is_not_observed() {
        let k = CameraIntrinsics::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pose = pose_at(Vector3::new(0.0, 0.0, -300.0));
        assert!(matches!(
            observe_depth_centroid(&pose, &probe(), &k, 0.0, &mut rng),
            Err(Error::NoObservation(_))
        ));
        let far_left = pose_at(Vector3::new(-5000.0, 0.0, 600.0));
        assert!(observe_depth_centroid(&far_left, &probe(), &k, 0.0, &mut rng).is_err());
    }

    #[test]
    fn noise_rms_matches_isotropic_gaussian() {
        let k = CameraIntrinsics::default();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let pose = pose_at(Vector3::new(0.0, 0.0, 600.0));
        let truth = pose.transform_point(&Vector3::from(probe().centroid_offset));
        let n = 1000;
        let sum_sq: f64 = (0..n)
            .map(|_| {
                let obs = observe_depth_centroid(&pose, &probe(), &k, 2.0, &mut rng).unwrap();
                (obs.centroid - truth).norm_squared()
            })
            .sum();
        let rms = (sum_sq / n as f64).sqrt();
        let expected = 2.0 * 3f64.sqrt();
        assert!((rms - expected).abs() / expected < 0.1, "{rms}");
    }
}
