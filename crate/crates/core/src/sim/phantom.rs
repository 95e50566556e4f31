//! Analytic phantoms and B-mode frame synthesis.

use nalgebra::{Isometry3, Point3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::se3::RigidTransform;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lesion {
    pub center: [f64; 3],
    pub radius: f64,
    pub intensity: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vessel {
    pub start: [f64; 3],
    pub end: [f64; 3],
    pub radius: f64,
    pub intensity: u8,
}

/// A box `[0, extent]` in its own frame, placed in the camera frame by `pose`.
/// Inclusions override the background; vessels override lesions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Phantom {
    pub extent: [f64; 3],
    pub background_intensity: u8,
    #[serde(default)]
    pub lesions: Vec<Lesion>,
    #[serde(default)]
    pub vessels: Vec<Vessel>,
    /// Phantom frame to camera frame.
    #[serde(default)]
    pub pose: RigidTransform,
}

fn segment_distance(p: &Vector3<f64>, a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    let s = if len2 > 0.0 {
        ((p - a).dot(&ab) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (p - (a + ab * s)).norm()
}

impl Phantom {
    pub fn validate(&self) -> Result<()> {
        let inside = |p: &[f64; 3], margin: f64| {
            (0..3).all(|i| p[i] - margin >= 0.0 && p[i] + margin <= self.extent[i])
        };
        if self.extent.iter().any(|e| !(*e > 0.0)) {
            return Err(Error::invalid("phantom extent must be positive"));
        }
        for (i, l) in self.lesions.iter().enumerate() {
            if !(l.radius > 0.0) || !inside(&l.center, l.radius) {
                return Err(Error::invalid(format!("lesion {i} does not fit inside the phantom")));
            }
        }
        for (i, v) in self.vessels.iter().enumerate() {
            if !(v.radius > 0.0) || !inside(&v.start, v.radius) || !inside(&v.end, v.radius) {
                return Err(Error::invalid(format!("vessel {i} does not fit inside the phantom")));
            }
        }
        Ok(())
    }

    pub fn isometry(&self) -> Isometry3<f64> {
        self.pose.to_isometry()
    }

    /// Intensity at a point given in phantom coordinates.
    pub fn intensity_local(&self, p: &Vector3<f64>) -> u8 {
        if (0..3).any(|i| p[i] < 0.0 || p[i] > self.extent[i]) {
            return 0;
        }
        let mut value = self.background_intensity;
        for l in &self.lesions {
            if (p - Vector3::from(l.center)).norm() <= l.radius {
                value = l.intensity;
            }
        }
        for v in &self.vessels {
            if segment_distance(p, &Vector3::from(v.start), &Vector3::from(v.end)) <= v.radius {
                value = v.intensity;
            }
        }
        value
    }

    /// Intensity at a camera-frame point.
    pub fn intensity_at(&self, p_world: &Vector3<f64>) -> u8 {
        let local = self.isometry().inverse_transform_point(&Point3::from(*p_world));
        self.intensity_local(&local.coords)
    }

    /// Single-sphere phantom used by the compounding checks.
    pub fn sphere(extent: [f64; 3], center: [f64; 3], radius: f64, pose: RigidTransform) -> Self {
        Phantom {
            extent,
            background_intensity: 60,
            lesions: vec![Lesion {
                center,
                radius,
                intensity: 200,
            }],
            vessels: vec![],
            pose,
        }
    }

    /// Rectangular tissue phantom with eight lesions along the sweep axis.
    pub fn preset_a(pose: RigidTransform) -> Self {
        let lesions = (0..8)
            .map(|i| Lesion {
                center: [25.0 + 30.0 * i as f64, if i % 2 == 0 { 34.0 } else { 46.0 }, 20.0 + 4.0 * (i % 3) as f64],
                radius: 4.0 + (i % 3) as f64,
                intensity: 190,
            })
            .collect();
        Phantom {
            extent: [260.0, 80.0, 50.0],
            background_intensity: 70,
            lesions,
            vessels: vec![],
            pose,
        }
    }

    /// Rectangular phantom with four straight vessels.
    pub fn preset_b(pose: RigidTransform) -> Self {
        let vessels = (0..4)
            .map(|i| Vessel {
                start: [10.0, 28.0 + 8.0 * i as f64, 15.0 + 5.0 * i as f64],
                end: [250.0, 28.0 + 8.0 * i as f64, 18.0 + 5.0 * i as f64],
                radius: 2.0 + 0.5 * i as f64,
                intensity: 20,
            })
            .collect();
        Phantom {
            extent: [260.0, 80.0, 50.0],
            background_intensity: 80,
            lesions: vec![],
            vessels,
            pose,
        }
    }

    /// Breast-sized phantom with four lesions of varying size.
    pub fn preset_c(pose: RigidTransform) -> Self {
        let lesions = [
            ([60.0, 38.0, 18.0], 6.0),
            ([110.0, 44.0, 24.0], 8.0),
            ([160.0, 36.0, 20.0], 5.0),
            ([200.0, 42.0, 26.0], 7.0),
        ]
        .into_iter()
        .map(|(center, radius)| Lesion {
            center,
            radius,
            intensity: 210,
        })
        .collect();
        Phantom {
            extent: [260.0, 80.0, 50.0],
            background_intensity: 65,
            lesions,
            vessels: vec![],
            pose,
        }
    }
}

/// An 8-bit B-mode raster. Pixel `(u, v)` sits at image-plane point
/// `(s_u·u, s_v·v, 0)` mm; `u` runs along rows (x fastest).
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub t: f64,
    pub width: usize,
    pub height: usize,
    pub pixel_spacing: [f64; 2],
    pub data: Vec<u8>,
}

impl Frame {
    pub fn new(t: f64, width: usize, height: usize, pixel_spacing: [f64; 2], data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::invalid("frame data length must equal width × height"));
        }
        if !(pixel_spacing[0] > 0.0 && pixel_spacing[1] > 0.0) {
            return Err(Error::invalid("pixel spacing must be positive"));
        }
        Ok(Frame {
            t,
            width,
            height,
            pixel_spacing,
            data,
        })
    }

    pub fn get(&self, u: usize, v: usize) -> u8 {
        self.data[v * self.width + u]
    }
}

/// Multiplicative uniform speckle `I·(1 + amount·U(−1, 1))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Speckle {
    pub amount: f64,
    pub seed: u64,
}

/// Samples the phantom on the image plane placed by `image_to_world`.
pub fn render_frame(
    phantom: &Phantom,
    image_to_world: &Isometry3<f64>,
    t: f64,
    width: usize,
    height: usize,
    pixel_spacing: [f64; 2],
    speckle: Option<Speckle>,
) -> Frame {
    let to_local = phantom.isometry().inverse() * image_to_world;
    let mut rng = speckle.map(|s| ChaCha8Rng::seed_from_u64(s.seed));
    let mut data = Vec::with_capacity(width * height);
    for v in 0..height {
        for u in 0..width {
            let img = Point3::new(pixel_spacing[0] * u as f64, pixel_spacing[1] * v as f64, 0.0);
            let local = to_local * img;
            let mut value = phantom.intensity_local(&local.coords);
            if let (Some(rng), Some(s)) = (rng.as_mut(), speckle) {
                let factor = 1.0 + s.amount * rng.random_range(-1.0..1.0);
                value = (value as f64 * factor).round().clamp(0.0, 255.0) as u8;
            }
            data.push(value);
        }
    }
    Frame {
        t,
        width,
        height,
        pixel_spacing,
        data,
    }
}
