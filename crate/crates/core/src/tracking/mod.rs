//! Online tracking loop: a simulated pose tracker watched by a low-cadence
//! segmenter check, the centroid divergence detector and re-initialization
//! with missing-pose bookkeeping.

use std::io::{BufRead, Write};
use std::path::Path;

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::se3::{Pose, PoseSequence};
use crate::sim::depth::{observe_depth_centroid, CameraIntrinsics, DepthMap};

/// Stand-in for the probe CAD model: its bounding box and the box centre in
/// the probe frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeModel {
    pub bbox_dims: [f64; 3],
    pub centroid_offset: [f64; 3],
}

impl Default for ProbeModel {
    /// A linear probe: 25 mm elevation, 45 mm lateral, 160 mm long, with
    /// the body above the transducer face.
    fn default() -> Self {
        ProbeModel {
            bbox_dims: [25.0, 45.0, 160.0],
            centroid_offset: [0.0, 0.0, -80.0],
        }
    }
}

impl ProbeModel {
    pub fn validate(&self) -> Result<()> {
        if self.bbox_dims.iter().any(|&d| !(d > 0.0)) {
            return Err(Error::invalid("probe bounding-box dimensions must be positive"));
        }
        if self.centroid_offset.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("probe centroid offset must be finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    pub eta: f64,
    /// Fixed tolerance δ₀, mm.
    pub delta0: f64,
    pub depth_min: f64,
    pub depth_max: f64,
    /// Frames between segmenter checks.
    pub check_period: usize,
    /// Consecutive checks without an observation before tracking is lost.
    pub max_missed_checks: usize,
    /// Re-initialization noise, mm and degrees, truncated at 3σ per axis.
    pub reinit_sigma_pos: f64,
    pub reinit_sigma_rot_deg: f64,
    /// Per-axis noise on the observed visual centroid, mm.
    pub observation_sigma: f64,
    /// Per-frame decay of the re-initialization offset towards the tracker
    /// stream (1 keeps it forever).
    pub relaxation: f64,
    pub intrinsics: CameraIntrinsics,
    pub seed: u64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            eta: 0.8,
            delta0: 30.0,
            depth_min: 200.0,
            depth_max: 1500.0,
            check_period: 10,
            max_missed_checks: 5,
            reinit_sigma_pos: 2.0,
            reinit_sigma_rot_deg: 1.0,
            observation_sigma: 1.0,
            relaxation: 0.9,
            intrinsics: CameraIntrinsics::default(),
            seed: 0,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0) {
            return Err(Error::invalid("eta must be positive"));
        }
        if !(self.delta0 >= 0.0) {
            return Err(Error::invalid("delta0 must be non-negative"));
        }
        if !(self.depth_min < self.depth_max) {
            return Err(Error::invalid("depth_min must be below depth_max"));
        }
        if self.check_period == 0 || self.max_missed_checks == 0 {
            return Err(Error::invalid("check_period and max_missed_checks must be at least 1"));
        }
        if !(self.reinit_sigma_pos >= 0.0 && self.reinit_sigma_rot_deg >= 0.0 && self.observation_sigma >= 0.0) {
            return Err(Error::invalid("noise levels must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.relaxation) {
            return Err(Error::invalid("relaxation must lie in [0, 1]"));
        }
        self.intrinsics.validate()
    }

    /// Largest position error the re-initialization oracle can introduce.
    pub fn reinit_position_bound(&self) -> f64 {
        3.0 * 3f64.sqrt() * self.reinit_sigma_pos
    }
}

/// Mean back-projection of the masked pixels whose depth lies inside the
/// validity band.
pub fn visual_centroid(
    mask: &[(u32, u32)],
    depth: &DepthMap,
    intrinsics: &CameraIntrinsics,
    cfg: &DetectorConfig,
) -> Result<Vector3<f64>> {
    let mut sum = Vector3::zeros();
    let mut n = 0usize;
    for &(u, v) in mask {
        let Some(d) = depth.get(u, v) else { continue };
        if d.is_finite() && d >= cfg.depth_min && d <= cfg.depth_max {
            sum += intrinsics.back_project(u as f64, v as f64, d);
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::NoObservation("no masked pixel with valid depth".into()));
    }
    Ok(sum / n as f64)
}

pub fn tracked_centroid(pose: &Pose, probe: &ProbeModel) -> Result<Vector3<f64>> {
    if !pose.valid {
        return Err(Error::invalid("tracked centroid of an invalid pose"));
    }
    Ok(pose.transform_point(&Vector3::from(probe.centroid_offset)))
}

/// `ε = ‖d_M‖₂ / 2 · η + δ₀`.
pub fn divergence_threshold(probe: &ProbeModel, cfg: &DetectorConfig) -> f64 {
    Vector3::from(probe.bbox_dims).norm() / 2.0 * cfg.eta + cfg.delta0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FailureKind {
    /// Offset applied in full from `frame_index` on.
    Jump,
    /// Offset growing linearly over `duration_frames`, then held.
    Ramp,
}

/// A scripted tracker failure. The offset persists until the detector fires.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InjectedFailure {
    pub frame_index: usize,
    #[serde(rename = "type")]
    pub kind: FailureKind,
    pub magnitude_mm: f64,
    #[serde(default)]
    pub magnitude_deg: f64,
    #[serde(default)]
    pub duration_frames: usize,
}

impl InjectedFailure {
    fn fraction(&self, frame: usize) -> f64 {
        if frame < self.frame_index {
            return 0.0;
        }
        match self.kind {
            FailureKind::Jump => 1.0,
            FailureKind::Ramp if self.duration_frames == 0 => 1.0,
            FailureKind::Ramp => ((frame - self.frame_index + 1) as f64 / self.duration_frames as f64).min(1.0),
        }
    }
}

pub fn read_failure_script(path: &Path) -> Result<Vec<InjectedFailure>> {
    let script: Vec<InjectedFailure> = crate::io::read_json(path)?;
    for f in &script {
        if !(f.magnitude_mm.is_finite() && f.magnitude_deg.is_finite()) {
            return Err(Error::parse(path, 0, "failure magnitudes must be finite"));
        }
    }
    Ok(script)
}

/// Serializable pose used in event logs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseRecord {
    pub t: f64,
    /// `[w, x, y, z]`.
    pub rotation: [f64; 4],
    pub translation: [f64; 3],
}

impl From<&Pose> for PoseRecord {
    fn from(p: &Pose) -> Self {
        let q = p.rotation.quaternion();
        PoseRecord {
            t: p.t,
            rotation: [q.w, q.i, q.j, q.k],
            translation: p.translation.into(),
        }
    }
}

impl PoseRecord {
    pub fn to_pose(&self) -> Pose {
        let [w, x, y, z] = self.rotation;
        Pose::new(
            self.t,
            UnitQuaternion::from_quaternion(Quaternion::new(w, x, y, z)),
            Vector3::from(self.translation),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DivergenceEvent {
    pub frame_detect: usize,
    pub t_detect: f64,
    pub discrepancy: f64,
    pub threshold: f64,
    /// `(t_prev_check, t_detect)`; poses strictly after the first and up to
    /// and including the second are invalid.
    pub gap: (f64, f64),
    pub recovered_pose: PoseRecord,
}

/// One segmenter check. `discrepancy` is `None` when nothing was observed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CheckRecord {
    pub frame: usize,
    pub t: f64,
    pub discrepancy: Option<f64>,
    pub fired: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackingOutcome {
    pub sequence: PoseSequence,
    pub events: Vec<DivergenceEvent>,
    pub checks: Vec<CheckRecord>,
    pub threshold: f64,
}

pub fn write_event_log(w: &mut impl Write, events: &[DivergenceEvent]) -> Result<()> {
    for e in events {
        serde_json::to_writer(&mut *w, e)?;
        writeln!(w)?;
    }
    Ok(())
}

pub fn read_event_log(r: impl BufRead) -> Result<Vec<DivergenceEvent>> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

/// Rigid offset applied on top of the tracker stream: rotation left-multiplied,
/// translation added.
#[derive(Debug, Clone, Copy)]
struct Offset {
    rotation: UnitQuaternion<f64>,
    translation: Vector3<f64>,
}

impl Offset {
    fn identity() -> Self {
        Offset {
            rotation: UnitQuaternion::identity(),
            translation: Vector3::zeros(),
        }
    }

    fn apply(&self, p: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * p.rotation,
            translation: p.translation + self.translation,
            ..*p
        }
    }

    fn scaled(&self, s: f64) -> Self {
        Offset {
            rotation: UnitQuaternion::identity().slerp(&self.rotation, s),
            translation: self.translation * s,
        }
    }

    fn compose(&self, other: &Offset) -> Self {
        Offset {
            rotation: self.rotation * other.rotation,
            translation: self.translation + other.translation,
        }
    }
}

fn unit_direction(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    let n = Normal::new(0.0, 1.0).expect("unit normal");
    loop {
        let v = Vector3::new(n.sample(rng), n.sample(rng), n.sample(rng));
        let norm = v.norm();
        if norm > 1e-9 {
            return v / norm;
        }
    }
}

fn truncated_normal3(rng: &mut impl Rng, sigma: f64) -> Vector3<f64> {
    if sigma == 0.0 {
        return Vector3::zeros();
    }
    let n = Normal::new(0.0, sigma).expect("sigma is validated");
    let mut draw = || loop {
        let x: f64 = n.sample(rng);
        if x.abs() <= 3.0 * sigma {
            return x;
        }
    };
    Vector3::new(draw(), draw(), draw())
}

/// Runs the tracking loop over `tracker` (the raw tracker stream) with the
/// ground truth `gt` standing in for the segmenter and initializer oracles.
///
/// Checks happen after frames `0, P, 2P, ...`. A check fires when the
/// visual/tracked centroid distance strictly exceeds the threshold; the
/// frames since the last clean check are then marked missing and the
/// tracker restarts from a noisy ground-truth pose.
pub fn run_tracking(
    gt: &PoseSequence,
    tracker: &PoseSequence,
    probe: &ProbeModel,
    cfg: &DetectorConfig,
    failures: &[InjectedFailure],
) -> Result<TrackingOutcome> {
    probe.validate()?;
    cfg.validate()?;
    if gt.len() != tracker.len() {
        return Err(Error::invalid("ground truth and tracker streams differ in length"));
    }
    let threshold = divergence_threshold(probe, cfg);
    let mut rng_obs = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng_obs.set_stream(21);
    let mut rng_init = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng_init.set_stream(22);
    let mut rng_fail = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng_fail.set_stream(23);

    // Each scripted failure gets a fixed random direction and rotation axis.
    let failure_dirs: Vec<(Vector3<f64>, Vector3<f64>)> = failures
        .iter()
        .map(|_| (unit_direction(&mut rng_fail), unit_direction(&mut rng_fail)))
        .collect();
    let mut cleared = vec![false; failures.len()];

    let mut out: Vec<Pose> = Vec::with_capacity(gt.len());
    let mut events = Vec::new();
    let mut checks = Vec::new();
    let mut correction = Offset::identity();
    let mut last_clean_check = 0usize;
    let mut missed = 0usize;

    for i in 0..gt.len() {
        let raw = tracker[i];
        let mut failure = Offset::identity();
        for (j, f) in failures.iter().enumerate() {
            if cleared[j] || i < f.frame_index {
                continue;
            }
            let s = f.fraction(i);
            let (dir, axis) = failure_dirs[j];
            failure = failure.compose(&Offset {
                rotation: UnitQuaternion::from_scaled_axis(axis * (f.magnitude_deg.to_radians() * s)),
                translation: dir * (f.magnitude_mm * s),
            });
        }
        let mut pose = if raw.valid {
            correction.apply(&failure.apply(&raw))
        } else {
            raw
        };
        pose.t = gt[i].t;
        out.push(pose);

        if i % cfg.check_period != 0 {
            correction = correction.scaled(cfg.relaxation);
            continue;
        }
        let observed = observe_depth_centroid(&gt[i], probe, &cfg.intrinsics, cfg.observation_sigma, &mut rng_obs)
            .and_then(|obs| visual_centroid(&obs.mask, &obs.depth, &cfg.intrinsics, cfg));
        let visual = match observed {
            Ok(c) => c,
            Err(Error::NoObservation(_)) => {
                missed += 1;
                checks.push(CheckRecord {
                    frame: i,
                    t: gt[i].t,
                    discrepancy: None,
                    fired: false,
                });
                if missed >= cfg.max_missed_checks {
                    return Err(Error::TrackingLost { frame: i, missed });
                }
                correction = correction.scaled(cfg.relaxation);
                continue;
            }
            Err(e) => return Err(e),
        };
        missed = 0;
        if !pose.valid {
            checks.push(CheckRecord {
                frame: i,
                t: gt[i].t,
                discrepancy: None,
                fired: false,
            });
            correction = correction.scaled(cfg.relaxation);
            continue;
        }
        let discrepancy = (visual - tracked_centroid(&pose, probe)?).norm();
        let fired = discrepancy > threshold;
        checks.push(CheckRecord {
            frame: i,
            t: gt[i].t,
            discrepancy: Some(discrepancy),
            fired,
        });
        if !fired {
            last_clean_check = i;
            correction = correction.scaled(cfg.relaxation);
            continue;
        }

        let dp = truncated_normal3(&mut rng_init, cfg.reinit_sigma_pos);
        let dr = truncated_normal3(&mut rng_init, cfg.reinit_sigma_rot_deg.to_radians());
        let recovered = Pose::new(
            gt[i].t,
            UnitQuaternion::from_scaled_axis(dr) * gt[i].rotation,
            gt[i].translation + dp,
        );
        for p in &mut out[last_clean_check + 1..=i] {
            p.valid = false;
        }
        events.push(DivergenceEvent {
            frame_detect: i,
            t_detect: gt[i].t,
            discrepancy,
            threshold,
            gap: (gt[last_clean_check].t, gt[i].t),
            recovered_pose: PoseRecord::from(&recovered),
        });
        log::info!(
            "divergence at frame {i}: {discrepancy:.1} mm > {threshold:.1} mm, frames {}..={i} marked missing",
            last_clean_check + 1
        );
        for (j, f) in failures.iter().enumerate() {
            if f.frame_index <= i {
                cleared[j] = true;
            }
        }
        // Re-anchor the tracker stream on the recovered pose.
        correction = if raw.valid {
            Offset {
                rotation: recovered.rotation * raw.rotation.inverse(),
                translation: recovered.translation - raw.translation,
            }
            .scaled(cfg.relaxation)
        } else {
            Offset::identity()
        };
        last_clean_check = i;
    }

    Ok(TrackingOutcome {
        sequence: PoseSequence::new(out)?,
        events,
        checks,
        threshold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::noise::{inject_noise, NoiseConfig};
    use crate::sim::trajectory::{generate_trajectory, TrajectoryConfig, TrajectoryMode};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn intrinsics() -> CameraIntrinsics {
        CameraIntrinsics::default()
    }

    fn full_map(u0: u32, v0: u32, w: u32, h: u32, data: Vec<f64>) -> DepthMap {
        DepthMap {
            u0,
            v0,
            width: w,
            height: h,
            data,
        }
    }

    #[test]
    fn centroid_of_principal_point_pixel() {
        let k = CameraIntrinsics {
            cx: 320.0,
            cy: 240.0,
            ..intrinsics()
        };
        let map = full_map(320, 240, 1, 1, vec![500.0]);
        let c = visual_centroid(&[(320, 240)], &map, &k, &DetectorConfig::default()).unwrap();
        assert_relative_eq!(c, Vector3::new(0.0, 0.0, 500.0), epsilon = 1e-12);
    }

    #[test]
    fn symmetric_pixels_average_to_the_axis() {
        let k = CameraIntrinsics {
            cx: 320.0,
            cy: 240.0,
            ..intrinsics()
        };
        let map = full_map(310, 240, 21, 1, vec![700.0; 21]);
        let c = visual_centroid(&[(310, 240), (330, 240)], &map, &k, &DetectorConfig::default()).unwrap();
        assert_relative_eq!(c, Vector3::new(0.0, 0.0, 700.0), epsilon = 1e-12);
    }

    #[test]
    fn three_pixel_patch_matches_hand_back_projection() {
        let k = intrinsics();
        let map = full_map(100, 50, 3, 1, vec![400.0, 410.0, 5000.0]);
        let mask = [(100, 50), (101, 50), (102, 50)];
        // The third pixel is outside the depth band and must be ignored.
        let c = visual_centroid(&mask, &map, &k, &DetectorConfig::default()).unwrap();
        let bp = |u: f64, v: f64, d: f64| [d * (u - k.cx) / k.fx, d * (v - k.cy) / k.fy, d];
        let a = bp(100.0, 50.0, 400.0);
        let b = bp(101.0, 50.0, 410.0);
        for axis in 0..3 {
            assert_relative_eq!(c[axis], (a[axis] + b[axis]) / 2.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn empty_valid_set_is_no_observation() {
        let map = full_map(0, 0, 1, 1, vec![50.0]);
        let r = visual_centroid(&[(0, 0), (9, 9)], &map, &intrinsics(), &DetectorConfig::default());
        assert!(matches!(r, Err(Error::NoObservation(_))));
    }

    #[test]
    fn tracked_centroid_examples() {
        let zero = ProbeModel {
            bbox_dims: [1.0; 3],
            centroid_offset: [0.0; 3],
        };
        let id = Pose::new(0.0, UnitQuaternion::identity(), Vector3::zeros());
        assert_relative_eq!(tracked_centroid(&id, &zero).unwrap(), Vector3::zeros());

        let probe = ProbeModel {
            bbox_dims: [1.0; 3],
            centroid_offset: [1.0, 2.0, 3.0],
        };
        let shifted = Pose::new(0.0, UnitQuaternion::identity(), Vector3::new(10.0, 0.0, -5.0));
        assert_relative_eq!(tracked_centroid(&shifted, &probe).unwrap(), Vector3::new(11.0, 2.0, -2.0));

        let rz = Pose::new(
            0.0,
            UnitQuaternion::from_axis_angle(&Vector3::z_axis(), std::f64::consts::FRAC_PI_2),
            Vector3::new(5.0, 5.0, 5.0),
        );
        // R_z(90°) maps (x, y, z) to (−y, x, z).
        assert_relative_eq!(
            tracked_centroid(&rz, &probe).unwrap(),
            Vector3::new(5.0 - 2.0, 5.0 + 1.0, 5.0 + 3.0),
            epsilon = 1e-12
        );
        assert!(tracked_centroid(&Pose::missing(0.0), &probe).is_err());
    }

    #[test]
    fn threshold_examples() {
        let cfg = DetectorConfig::default();
        assert_eq!((cfg.eta, cfg.delta0), (0.8, 30.0));
        let point = ProbeModel {
            bbox_dims: [0.0, 0.0, 0.0],
            centroid_offset: [0.0; 3],
        };
        assert_relative_eq!(divergence_threshold(&point, &cfg), 30.0);
        let box345 = ProbeModel {
            bbox_dims: [60.0, 80.0, 0.0],
            centroid_offset: [0.0; 3],
        };
        assert_relative_eq!(divergence_threshold(&box345, &cfg), 70.0, epsilon = 1e-12);
    }

    fn scan(seed: u64, frames_s: f64, noise: NoiseConfig) -> (PoseSequence, PoseSequence) {
        let traj = TrajectoryConfig::new(TrajectoryMode::Free, 300.0, frames_s, seed);
        let gt = generate_trajectory(&traj).unwrap();
        let raw = inject_noise(&gt, &noise).unwrap();
        (gt, raw)
    }

    #[test]
    fn no_failure_no_events_over_many_seeds() {
        for seed in 0..100 {
            let (gt, raw) = scan(seed, 1000.0 / 30.0, NoiseConfig::nominal(seed + 1000));
            assert_eq!(gt.len(), 1000);
            let cfg = DetectorConfig {
                seed,
                ..DetectorConfig::default()
            };
            let out = run_tracking(&gt, &raw, &ProbeModel::default(), &cfg, &[]).unwrap();
            assert!(out.events.is_empty(), "seed {seed}: {:?}", out.events.first());
            assert_eq!(out.sequence.valid_count(), 1000);
        }
    }

    #[test]
    fn jump_is_detected_at_next_check() {
        let (gt, raw) = scan(4, 20.0, NoiseConfig::nominal(9));
        let script = [InjectedFailure {
            frame_index: 305,
            kind: FailureKind::Jump,
            magnitude_mm: 200.0,
            magnitude_deg: 0.0,
            duration_frames: 0,
        }];
        let out = run_tracking(&gt, &raw, &ProbeModel::default(), &DetectorConfig::default(), &script).unwrap();
        assert_eq!(out.events.len(), 1);
        let e = &out.events[0];
        assert_eq!(e.frame_detect, 310);
        assert!(e.discrepancy > e.threshold);
        for (i, p) in out.sequence.iter().enumerate() {
            assert_eq!(p.valid, !(301..=310).contains(&i), "frame {i}");
        }
        assert_relative_eq!(e.gap.0, gt[300].t);
        assert_relative_eq!(e.gap.1, gt[310].t);
    }

    #[test]
    fn ramp_fires_at_first_check_above_threshold() {
        let (gt, raw) = scan(6, 20.0, NoiseConfig::nominal(2));
        let script = [InjectedFailure {
            frame_index: 100,
            kind: FailureKind::Ramp,
            magnitude_mm: 300.0,
            magnitude_deg: 5.0,
            duration_frames: 150,
        }];
        let cfg = DetectorConfig::default();
        let out = run_tracking(&gt, &raw, &ProbeModel::default(), &cfg, &script).unwrap();
        assert_eq!(out.events.len(), 1);
        let trace: Vec<_> = out.checks.iter().filter_map(|c| c.discrepancy.map(|d| (c.frame, d))).collect();
        let first = trace.iter().find(|(_, d)| *d > out.threshold).unwrap();
        assert_eq!(out.events[0].frame_detect, first.0);
        assert!(first.0 > 100 && first.0 < 250);
        for (f, d) in &trace {
            if *f < first.0 {
                assert!(*d <= out.threshold);
            }
        }
    }

    #[test]
    fn recovery_lands_within_init_noise_bound() {
        let (gt, raw) = scan(8, 20.0, NoiseConfig::zero(0));
        let cfg = DetectorConfig::default();
        let script: Vec<_> = [50, 200, 400]
            .iter()
            .map(|&f| InjectedFailure {
                frame_index: f,
                kind: FailureKind::Jump,
                magnitude_mm: 150.0,
                magnitude_deg: 10.0,
                duration_frames: 0,
            })
            .collect();
        let out = run_tracking(&gt, &raw, &ProbeModel::default(), &cfg, &script).unwrap();
        assert_eq!(out.events.len(), 3);
        for e in &out.events {
            let next = &out.sequence[e.frame_detect + 1];
            let err = (next.translation - gt[e.frame_detect + 1].translation).norm();
            assert!(err <= cfg.reinit_position_bound(), "{err}");
        }
    }

    #[test]
    fn tracking_lost_when_probe_leaves_the_view() {
        let (gt, raw) = scan(1, 5.0, NoiseConfig::zero(0));
        let away: Vec<Pose> = gt
            .iter()
            .map(|p| Pose {
                translation: p.translation + Vector3::new(0.0, 0.0, -2000.0),
                ..*p
            })
            .collect();
        let away = PoseSequence::new(away).unwrap();
        let r = run_tracking(&away, &raw, &ProbeModel::default(), &DetectorConfig::default(), &[]);
        assert!(matches!(r, Err(Error::TrackingLost { frame: 40, missed: 5 })));
    }

    #[test]
    fn tracking_is_deterministic() {
        let (gt, raw) = scan(3, 10.0, NoiseConfig::nominal(3));
        let script = [InjectedFailure {
            frame_index: 120,
            kind: FailureKind::Ramp,
            magnitude_mm: 250.0,
            magnitude_deg: 3.0,
            duration_frames: 60,
        }];
        let cfg = DetectorConfig {
            seed: 77,
            ..DetectorConfig::default()
        };
        let a = run_tracking(&gt, &raw, &ProbeModel::default(), &cfg, &script).unwrap();
        let b = run_tracking(&gt, &raw, &ProbeModel::default(), &cfg, &script).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn event_log_and_script_round_trip() {
        let (gt, raw) = scan(5, 12.0, NoiseConfig::nominal(5));
        let script = vec![InjectedFailure {
            frame_index: 200,
            kind: FailureKind::Jump,
            magnitude_mm: 200.0,
            magnitude_deg: 0.0,
            duration_frames: 0,
        }];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("failures.json");
        crate::io::write_json(&path, &script).unwrap();
        assert_eq!(read_failure_script(&path).unwrap(), script);

        let out = run_tracking(&gt, &raw, &ProbeModel::default(), &DetectorConfig::default(), &script).unwrap();
        let mut buf = Vec::new();
        write_event_log(&mut buf, &out.events).unwrap();
        assert_eq!(String::from_utf8_lossy(&buf).lines().count(), out.events.len());
        assert_eq!(read_event_log(&buf[..]).unwrap(), out.events);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn detector_fires_iff_discrepancy_exceeds_threshold(
            seed in 0u64..1000,
            magnitude in 0.0f64..250.0,
            frame in 20usize..200,
        ) {
            let (gt, raw) = scan(seed, 10.0, NoiseConfig::nominal(seed));
            let script = [InjectedFailure {
                frame_index: frame,
                kind: FailureKind::Jump,
                magnitude_mm: magnitude,
                magnitude_deg: 0.0,
                duration_frames: 0,
            }];
            let out = run_tracking(&gt, &raw, &ProbeModel::default(), &DetectorConfig::default(), &script).unwrap();
            for c in &out.checks {
                if let Some(d) = c.discrepancy {
                    prop_assert_eq!(c.fired, d > out.threshold);
                }
            }
            let fired = out.checks.iter().filter(|c| c.fired).count();
            prop_assert_eq!(fired, out.events.len());
            // Invalid frames are exactly the union of the event gaps.
            let mut expected = vec![true; gt.len()];
            for e in &out.events {
                for (i, p) in gt.iter().enumerate() {
                    if p.t > e.gap.0 && p.t <= e.gap.1 {
                        expected[i] = false;
                    }
                }
            }
            let actual: Vec<bool> = out.sequence.iter().map(|p| p.valid).collect();
            prop_assert_eq!(actual, expected);
        }
    }
}
