//! Ground-truth freehand scan trajectories.
//!
//! Every mode is built from a unit-scale shape sampled at the frame times and
//! then scaled so the sampled path length equals `total_distance` exactly.
//! Orientation is a small sum of per-axis sinusoids on global time, so it is
//! continuous across the segments of a `free` scan.

use std::f64::consts::PI;

use nalgebra::{Rotation3, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::se3::{Pose, PoseSequence};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryMode {
    Linear,
    BackAndForth,
    Spiral,
    Free,
}

impl std::str::FromStr for TrajectoryMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(TrajectoryMode::Linear),
            "back_and_forth" | "back-and-forth" => Ok(TrajectoryMode::BackAndForth),
            "spiral" => Ok(TrajectoryMode::Spiral),
            "free" => Ok(TrajectoryMode::Free),
            other => Err(Error::invalid(format!("unknown trajectory mode `{other}`"))),
        }
    }
}

fn default_frame_rate() -> f64 {
    30.0
}

fn default_rotation_amplitude() -> f64 {
    2f64.to_radians()
}

fn default_center() -> [f64; 3] {
    [0.0, 0.0, 600.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryConfig {
    pub mode: TrajectoryMode,
    /// Path length in mm.
    pub total_distance: f64,
    /// Scan duration in s.
    pub duration: f64,
    #[serde(default = "default_frame_rate")]
    pub frame_rate: f64,
    /// Amplitude of the per-axis orientation sinusoids, radians.
    #[serde(default = "default_rotation_amplitude")]
    pub rotation_amplitude: f64,
    pub seed: u64,
    /// Camera-frame point the bounding box of the path is centred on.
    #[serde(default = "default_center")]
    pub center: [f64; 3],
}

impl TrajectoryConfig {
    pub fn new(mode: TrajectoryMode, total_distance: f64, duration: f64, seed: u64) -> Self {
        TrajectoryConfig {
            mode,
            total_distance,
            duration,
            frame_rate: default_frame_rate(),
            rotation_amplitude: default_rotation_amplitude(),
            seed,
            center: default_center(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.total_distance > 0.0 && self.duration > 0.0 && self.frame_rate > 0.0) {
            return Err(Error::invalid(
                "total_distance, duration and frame_rate must be positive",
            ));
        }
        if self.rotation_amplitude < 0.0 || !self.rotation_amplitude.is_finite() {
            return Err(Error::invalid("rotation_amplitude must be non-negative"));
        }
        if self.frame_count() < 2 {
            return Err(Error::invalid("trajectory needs at least two frames"));
        }
        Ok(())
    }

    pub fn frame_count(&self) -> usize {
        (self.duration * self.frame_rate).round() as usize
    }
}

/// One piece of a scan: frames `start_frame..=end_frame` share a mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentPlan {
    pub mode: TrajectoryMode,
    pub start_frame: usize,
    pub end_frame: usize,
    pub distance: f64,
    /// Heading of the sweep axis about camera z, radians.
    pub heading: f64,
    /// Number of passes (back-and-forth) or turns (spiral).
    pub repeats: u32,
}

const STREAM_PLAN: u64 = 1;
const STREAM_ROTATION: u64 = 2;

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// The deterministic segment layout of a trajectory.
pub fn plan_segments(cfg: &TrajectoryConfig) -> Result<Vec<SegmentPlan>> {
    cfg.validate()?;
    let n = cfg.frame_count();
    let last = n - 1;
    let mut rng = rng_for(cfg.seed, STREAM_PLAN);
    let repeats_for = |mode: TrajectoryMode, rng: &mut ChaCha8Rng| match mode {
        TrajectoryMode::BackAndForth => rng.random_range(3..=5),
        TrajectoryMode::Spiral => rng.random_range(2..=4),
        _ => 1,
    };
    if cfg.mode != TrajectoryMode::Free {
        let repeats = repeats_for(cfg.mode, &mut rng);
        return Ok(vec![SegmentPlan {
            mode: cfg.mode,
            start_frame: 0,
            end_frame: last,
            distance: cfg.total_distance,
            heading: 0.0,
            repeats,
        }]);
    }

    let modes = [
        TrajectoryMode::Linear,
        TrajectoryMode::BackAndForth,
        TrajectoryMode::Spiral,
    ];
    let max_segments = (last / 30).clamp(1, 4);
    let count = rng.random_range(2..=4usize).min(max_segments);
    let weights: Vec<f64> = (0..count).map(|_| rng.random_range(0.5..1.5)).collect();
    let total_w: f64 = weights.iter().sum();
    let mut bounds = vec![0usize];
    let mut acc = 0.0;
    for w in &weights[..count - 1] {
        acc += w;
        bounds.push(((acc / total_w) * last as f64).round() as usize);
    }
    bounds.push(last);

    let mut segments = Vec::with_capacity(count);
    for k in 0..count {
        let mode = modes[rng.random_range(0..modes.len())];
        let repeats = repeats_for(mode, &mut rng);
        let heading_jitter = rng.random_range(-0.5..0.5);
        let frames = bounds[k + 1] - bounds[k];
        segments.push(SegmentPlan {
            mode,
            start_frame: bounds[k],
            end_frame: bounds[k + 1],
            distance: cfg.total_distance * frames as f64 / last as f64,
            heading: heading_jitter,
            repeats,
        });
    }
    Ok(segments)
}

/// Unit-scale shape of one mode at parameter `tau ∈ [0, 1]`, advancing along +x.
fn unit_shape(mode: TrajectoryMode, repeats: u32, tau: f64) -> Vector3<f64> {
    match mode {
        TrajectoryMode::Linear => Vector3::new(tau, 0.0, 0.0),
        TrajectoryMode::BackAndForth => {
            let n = repeats as f64;
            Vector3::new(0.5 * (1.0 - (PI * n * tau).cos()), 0.1 * tau, 0.0)
        }
        TrajectoryMode::Spiral => {
            let r = 0.15;
            let theta = 2.0 * PI * repeats as f64 * tau;
            Vector3::new(
                tau + r * theta.sin(),
                r * (1.0 - theta.cos()),
                0.02 * theta.sin(),
            )
        }
        TrajectoryMode::Free => unreachable!("free mode is expanded into segments"),
    }
}

/// Monotone easing with zero endpoint velocity, so joined segments stay C¹.
fn ease(tau: f64) -> f64 {
    tau - (2.0 * PI * tau).sin() / (2.0 * PI)
}

fn path_length(points: &[Vector3<f64>]) -> f64 {
    points.windows(2).map(|w| (w[1] - w[0]).norm()).sum()
}

struct RotationProfile {
    amplitude: f64,
    freq: [f64; 3],
    phase: [f64; 3],
}

impl RotationProfile {
    fn new(cfg: &TrajectoryConfig) -> Self {
        let mut rng = rng_for(cfg.seed, STREAM_ROTATION);
        let mut freq = [0.0; 3];
        let mut phase = [0.0; 3];
        for i in 0..3 {
            freq[i] = rng.random_range(0.1..0.4);
            phase[i] = rng.random_range(0.0..2.0 * PI);
        }
        RotationProfile {
            amplitude: cfg.rotation_amplitude,
            freq,
            phase,
        }
    }

    fn at(&self, t: f64) -> UnitQuaternion<f64> {
        if self.amplitude == 0.0 {
            return UnitQuaternion::identity();
        }
        let a = |i: usize| self.amplitude * (2.0 * PI * self.freq[i] * t + self.phase[i]).sin();
        UnitQuaternion::from_axis_angle(&Vector3::z_axis(), a(2))
            * UnitQuaternion::from_axis_angle(&Vector3::y_axis(), a(1))
            * UnitQuaternion::from_axis_angle(&Vector3::x_axis(), a(0))
    }
}

/// Generates the ground-truth probe trajectory in the camera frame.
pub fn generate_trajectory(cfg: &TrajectoryConfig) -> Result<PoseSequence> {
    let segments = plan_segments(cfg)?;
    let n = cfg.frame_count();
    let free = cfg.mode == TrajectoryMode::Free;

    let mut positions: Vec<Vector3<f64>> = Vec::with_capacity(n);
    positions.push(Vector3::zeros());
    for seg in &segments {
        let frames = seg.end_frame - seg.start_frame;
        let shape: Vec<Vector3<f64>> = (0..=frames)
            .map(|i| {
                let tau = i as f64 / frames as f64;
                let tau = if free { ease(tau) } else { tau };
                unit_shape(seg.mode, seg.repeats, tau)
            })
            .collect();
        let scale = seg.distance / path_length(&shape);
        let start = *positions.last().expect("non-empty");
        // Free-mode segments head back toward the middle of the scan area.
        let mut heading = seg.heading;
        if free && start.x > 0.0 {
            heading += PI;
        }
        let rot = Rotation3::from_axis_angle(&Vector3::z_axis(), heading);
        let origin = shape[0];
        for p in &shape[1..] {
            positions.push(start + rot * ((p - origin) * scale));
        }
    }
    debug_assert_eq!(positions.len(), n);

    let (mut lo, mut hi) = (positions[0], positions[0]);
    for p in &positions {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    let shift = Vector3::from(cfg.center) - (lo + hi) / 2.0;

    let rotation = RotationProfile::new(cfg);
    let poses = positions
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let t = i as f64 / cfg.frame_rate;
            Pose::new(t, rotation.at(t), p + shift)
        })
        .collect();
    PoseSequence::new(poses)
}

/// Sum of consecutive position distances.
pub fn sequence_path_length(seq: &PoseSequence) -> f64 {
    seq.poses()
        .windows(2)
        .map(|w| (w[1].translation - w[0].translation).norm())
        .sum()
}
