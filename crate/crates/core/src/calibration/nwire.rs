//! Simulated N-wire calibration sessions with exact wire intersections.

use nalgebra::{Isometry3, Matrix3, Point3, Rotation3, Translation3, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::spatial::{NWire, NWireDataset, NWireObservation};
use crate::error::{Error, Result};
use crate::se3::RigidTransform;
use crate::sim::FrameGeometry;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "px", rename_all = "lowercase")]
pub enum PixelNoise {
    None,
    Gaussian(f64),
    /// Uniform on `[−h, h]` per coordinate.
    Uniform(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NWireProtocol {
    pub wires: Vec<NWire>,
    /// Phantom pose in the camera frame.
    pub phantom_pose: RigidTransform,
    /// Ground-truth image→probe transform.
    pub calibration: RigidTransform,
    pub pixel_spacing: [f64; 2],
    pub image_size: [usize; 2],
    pub observations: usize,
    /// Largest tilt of the image plane away from the wire cross-section, rad.
    pub max_tilt: f64,
    pub pixel_noise: PixelNoise,
    pub seed: u64,
}

/// Four Ns stacked in depth across most of the default image, wires running
/// along phantom y, with alternating diagonal directions.
pub fn default_wires() -> Vec<NWire> {
    let (width, length) = (28.0, 30.0);
    let layers = [(6.0, 4.0), (15.0, 6.0), (24.0, 3.0), (33.0, 5.0)];
    layers
        .iter()
        .enumerate()
        .map(|(k, &(z, x0))| {
            let (y0, y1) = if k % 2 == 1 { (length, 0.0) } else { (0.0, length) };
            NWire {
                wire_a: [[x0, 0.0, z], [x0, length, z]],
                diagonal: [[x0, y0, z], [x0 + width, y1, z]],
                wire_c: [[x0 + width, 0.0, z], [x0 + width, length, z]],
            }
        })
        .collect()
}

impl Default for NWireProtocol {
    fn default() -> Self {
        let geometry = FrameGeometry::default();
        let phantom = Isometry3::from_parts(
            Translation3::new(-20.0, 10.0, 550.0),
            UnitQuaternion::from_euler_angles(0.1, -0.05, 0.3),
        );
        NWireProtocol {
            wires: default_wires(),
            phantom_pose: RigidTransform::from_isometry(&phantom),
            calibration: geometry.calibration,
            pixel_spacing: geometry.pixel_spacing,
            image_size: [geometry.width, geometry.height],
            observations: 30,
            max_tilt: 12f64.to_radians(),
            pixel_noise: PixelNoise::None,
            seed: 0,
        }
    }
}

fn v3(p: &[f64; 3]) -> Vector3<f64> {
    Vector3::new(p[0], p[1], p[2])
}

/// Where the segment `seg` crosses the plane z = 0 of `image_from_phantom`,
/// as image-plane mm, if it does.
fn crossing(seg: &[[f64; 3]; 2], image_from_phantom: &Isometry3<f64>) -> Option<[f64; 2]> {
    let q0 = image_from_phantom * Point3::from(v3(&seg[0]));
    let q1 = image_from_phantom * Point3::from(v3(&seg[1]));
    let dz = q1.z - q0.z;
    if dz.abs() < 1e-9 {
        return None;
    }
    let s = -q0.z / dz;
    if !(0.0..=1.0).contains(&s) {
        return None;
    }
    let q = q0 + (q1 - q0) * s;
    Some([q.x, q.y])
}

impl NWireProtocol {
    pub fn validate(&self) -> Result<()> {
        if self.wires.is_empty() || self.observations == 0 {
            return Err(Error::invalid("need at least one wire and one observation"));
        }
        if !(self.pixel_spacing[0] > 0.0 && self.pixel_spacing[1] > 0.0) {
            return Err(Error::invalid("pixel_spacing must be positive"));
        }
        match self.pixel_noise {
            PixelNoise::Gaussian(s) | PixelNoise::Uniform(s) if !(s >= 0.0 && s.is_finite()) => {
                Err(Error::invalid("pixel noise must be finite and non-negative"))
            }
            _ => Ok(()),
        }
    }

    /// Draws `observations` image poses that see every N inside the image,
    /// records exact intersections and adds the configured pixel noise.
    pub fn simulate(&self) -> Result<NWireDataset> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let unit = Normal::new(0.0, 1.0).expect("valid");
        let [su, sv] = self.pixel_spacing;
        let (w_mm, h_mm) = (self.image_size[0] as f64 * su, self.image_size[1] as f64 * sv);
        let cam_from_phantom = self.phantom_pose.to_isometry();
        let image_to_probe = self.calibration.to_isometry();
        let y_span = self.wires.iter().flat_map(|w| w.segments()).flatten().map(|p| p[1]);
        let (y_lo, y_hi) = y_span.fold((f64::MAX, f64::MIN), |(a, b), y| (a.min(y), b.max(y)));
        // Image u → phantom x, v → phantom z, normal → phantom −y.
        let base = Rotation3::from_matrix_unchecked(Matrix3::new(1.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 1.0, 0.0));

        let mut observations = Vec::with_capacity(self.observations);
        let mut attempts = 0usize;
        while observations.len() < self.observations {
            attempts += 1;
            if attempts > 1000 * self.observations {
                return Err(Error::degenerate("could not find image poses that see every wire"));
            }
            let t = self.max_tilt;
            let tilt = UnitQuaternion::from_euler_angles(
                rng.random_range(-t..=t),
                rng.random_range(-t..=t),
                rng.random_range(-t..=t),
            );
            let origin = Vector3::new(
                rng.random_range(-3.0..3.0),
                rng.random_range(y_lo + 0.25 * (y_hi - y_lo)..=y_hi - 0.25 * (y_hi - y_lo)),
                rng.random_range(-3.0..3.0),
            );
            let phantom_from_image =
                Isometry3::from_parts(Translation3::from(origin), tilt * UnitQuaternion::from_rotation_matrix(&base));
            let image_from_phantom = phantom_from_image.inverse();
            let mut points = Vec::with_capacity(self.wires.len());
            for wire in &self.wires {
                let seen: Option<Vec<[f64; 2]>> = wire
                    .segments()
                    .iter()
                    .map(|seg| {
                        crossing(seg, &image_from_phantom)
                            .filter(|&[x, y]| x > 0.0 && x < w_mm && y > 0.0 && y < h_mm)
                            .map(|[x, y]| [x / su, y / sv])
                    })
                    .collect();
                match seen {
                    Some(p) => points.push([p[0], p[1], p[2]]),
                    None => break,
                }
            }
            if points.len() != self.wires.len() {
                continue;
            }
            for triple in &mut points {
                for p in triple.iter_mut() {
                    for c in p.iter_mut() {
                        *c += match self.pixel_noise {
                            PixelNoise::None => 0.0,
                            PixelNoise::Gaussian(s) => s * unit.sample(&mut rng),
                            PixelNoise::Uniform(h) => rng.random_range(-h..=h),
                        };
                    }
                }
            }
            let cam_from_probe = cam_from_phantom * phantom_from_image * image_to_probe.inverse();
            observations.push(NWireObservation {
                image_points: points,
                probe_pose: RigidTransform::from_isometry(&cam_from_probe),
                phantom_pose: self.phantom_pose,
            });
        }
        Ok(NWireDataset {
            wires: self.wires.clone(),
            pixel_spacing: self.pixel_spacing,
            observations,
        })
    }
}
