//! Scan bundles: a simulated acquisition with its ground truth, the raw
//! tracker output and the B-mode frames, on disk as
//!
//! ```text
//! <dir>/manifest.json
//! <dir>/gt.csv
//! <dir>/raw.csv
//! <dir>/frames/000000.pgm ...
//! ```

use std::path::Path;

use nalgebra::{Matrix3, Rotation3, Translation3, UnitQuaternion, Vector3, Isometry3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{read_json, read_pgm, read_pose_csv, write_json, write_pgm, write_pose_csv};
use crate::se3::{PoseSequence, RigidTransform};
use crate::sim::noise::{inject_noise, NoiseConfig};
use crate::sim::phantom::{render_frame, Frame, Phantom, Speckle};
use crate::sim::trajectory::{generate_trajectory, plan_segments, SegmentPlan, TrajectoryConfig};

pub const BUNDLE_VERSION: u32 = 1;

/// Image plane geometry and the ground-truth image→probe transform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameGeometry {
    pub width: usize,
    pub height: usize,
    pub pixel_spacing: [f64; 2],
    pub calibration: RigidTransform,
    /// Delay of the image stream behind the pose stream, s.
    #[serde(default)]
    pub image_latency_s: f64,
    #[serde(default)]
    pub speckle: Option<Speckle>,
}

impl Default for FrameGeometry {
    fn default() -> Self {
        let width = 128;
        let spacing = [0.3, 0.3];
        FrameGeometry {
            width,
            height: 128,
            pixel_spacing: spacing,
            calibration: default_calibration(width as f64 * spacing[0]),
            image_latency_s: 0.0,
            speckle: None,
        }
    }
}

/// Image x → probe y (lateral), image y → probe z (depth), image normal →
/// probe x, with the image centred laterally 3 mm below the probe face.
pub fn default_calibration(image_width_mm: f64) -> RigidTransform {
    let m = Matrix3::new(0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0);
    let rot = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(m));
    RigidTransform::from_isometry(&Isometry3::from_parts(
        Translation3::new(0.0, -image_width_mm / 2.0, 3.0),
        rot,
    ))
}

/// Places the phantom so its top face sits at the probe face height and it
/// is centred on `center` in x and y.
pub fn place_phantom_below(mut phantom: Phantom, center: [f64; 3]) -> Phantom {
    phantom.pose = RigidTransform::from_isometry(&Isometry3::translation(
        center[0] - phantom.extent[0] / 2.0,
        center[1] - phantom.extent[1] / 2.0,
        center[2],
    ));
    phantom
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanManifest {
    pub version: u32,
    pub trajectory: TrajectoryConfig,
    pub segments: Vec<SegmentPlan>,
    pub noise: NoiseConfig,
    pub phantom: Phantom,
    pub frame_geometry: FrameGeometry,
    pub frame_times: Vec<f64>,
    pub seeds: BundleSeeds,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BundleSeeds {
    pub trajectory: u64,
    pub noise: u64,
    pub speckle: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanBundle {
    pub manifest: ScanManifest,
    pub gt: PoseSequence,
    pub raw: PoseSequence,
    pub frames: Vec<Frame>,
}

/// Simulates a complete acquisition. With `render == false` the bundle
/// carries no frames (pose-only experiments).
pub fn simulate_scan(
    trajectory: &TrajectoryConfig,
    noise: &NoiseConfig,
    phantom: &Phantom,
    geometry: &FrameGeometry,
    render: bool,
) -> Result<ScanBundle> {
    phantom.validate()?;
    let gt = generate_trajectory(trajectory)?;
    let raw = inject_noise(&gt, noise)?;
    let calib = geometry.calibration.to_isometry();
    let frame_times: Vec<f64> = gt.iter().map(|p| p.t + geometry.image_latency_s).collect();
    let frames = if render {
        gt.iter()
            .enumerate()
            .map(|(i, pose)| {
                let speckle = geometry.speckle.map(|s| Speckle {
                    amount: s.amount,
                    seed: s.seed.wrapping_add(i as u64),
                });
                render_frame(
                    phantom,
                    &(pose.isometry() * calib),
                    frame_times[i],
                    geometry.width,
                    geometry.height,
                    geometry.pixel_spacing,
                    speckle,
                )
            })
            .collect()
    } else {
        Vec::new()
    };
    Ok(ScanBundle {
        manifest: ScanManifest {
            version: BUNDLE_VERSION,
            trajectory: trajectory.clone(),
            segments: plan_segments(trajectory)?,
            noise: noise.clone(),
            phantom: phantom.clone(),
            frame_geometry: geometry.clone(),
            frame_times,
            seeds: BundleSeeds {
                trajectory: trajectory.seed,
                noise: noise.seed,
                speckle: geometry.speckle.map(|s| s.seed),
            },
        },
        gt,
        raw,
        frames,
    })
}

fn frame_path(dir: &Path, i: usize) -> std::path::PathBuf {
    dir.join("frames").join(format!("{i:06}.pgm"))
}

impl ScanBundle {
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir.join("frames"))?;
        write_json(&dir.join("manifest.json"), &self.manifest)?;
        write_pose_csv(&dir.join("gt.csv"), &self.gt)?;
        write_pose_csv(&dir.join("raw.csv"), &self.raw)?;
        for (i, f) in self.frames.iter().enumerate() {
            write_pgm(&frame_path(dir, i), f.width, f.height, &f.data)?;
        }
        Ok(())
    }

    /// Reads a bundle; frames are loaded only when `with_frames` is set.
    pub fn read(dir: &Path, with_frames: bool) -> Result<Self> {
        let manifest_path = dir.join("manifest.json");
        let manifest: ScanManifest = read_json(&manifest_path)?;
        if manifest.version != BUNDLE_VERSION {
            return Err(Error::parse(
                &manifest_path,
                0,
                format!("unsupported bundle version {}", manifest.version),
            ));
        }
        let gt = read_pose_csv(&dir.join("gt.csv"))?;
        let raw = read_pose_csv(&dir.join("raw.csv"))?;
        if gt.len() != raw.len() || gt.len() != manifest.frame_times.len() {
            return Err(Error::parse(
                &manifest_path,
                0,
                "gt.csv, raw.csv and frame_times disagree in length",
            ));
        }
        let mut frames = Vec::new();
        if with_frames && frame_path(dir, 0).exists() {
            let g = &manifest.frame_geometry;
            for (i, &t) in manifest.frame_times.iter().enumerate() {
                let path = frame_path(dir, i);
                let (w, h, data) = read_pgm(&path)?;
                if w != g.width || h != g.height {
                    return Err(Error::parse(&path, 2, "frame size differs from manifest geometry"));
                }
                frames.push(Frame::new(t, w, h, g.pixel_spacing, data)?);
            }
        }
        Ok(ScanBundle {
            manifest,
            gt,
            raw,
            frames,
        })
    }

    pub fn camera_centroid_hint(&self) -> Vector3<f64> {
        Vector3::from(self.manifest.trajectory.center)
    }
}
