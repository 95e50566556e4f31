//! On-the-fly (noisy, clean) training pairs from the scan simulator.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::se3::{normalize_sequence, NormalizationParams, PoseSequence, PoseVector9, DEFAULT_SPATIAL_SCALE};
use crate::sim::noise::{inject_noise_components, NoiseConfig};
use crate::sim::trajectory::{generate_trajectory, TrajectoryConfig, TrajectoryMode};

/// A normalized training crop. `biased` is the clean sequence plus the
/// low-frequency bias only, the stage-1 target.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPair {
    pub noisy: Array2<f64>,
    pub clean: Array2<f64>,
    pub biased: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PairGenerator {
    pub sequence_length: usize,
    /// Frames simulated before cropping.
    pub source_frames: usize,
    pub frame_rate: f64,
    /// Mean probe speed range, mm/s.
    pub speed_range: [f64; 2],
    /// Rotation amplitude range, rad.
    pub rotation_range: [f64; 2],
    pub noise: NoiseConfig,
    pub spatial_scale: f64,
}

impl Default for PairGenerator {
    fn default() -> Self {
        PairGenerator {
            sequence_length: 256,
            source_frames: 420,
            frame_rate: 30.0,
            speed_range: [8.0, 45.0],
            rotation_range: [0.5f64.to_radians(), 3f64.to_radians()],
            noise: NoiseConfig::nominal(0),
            spatial_scale: DEFAULT_SPATIAL_SCALE,
        }
    }
}

const MODES: [TrajectoryMode; 4] = [
    TrajectoryMode::Linear,
    TrajectoryMode::BackAndForth,
    TrajectoryMode::Spiral,
    TrajectoryMode::Free,
];

impl PairGenerator {
    pub fn validate(&self) -> Result<()> {
        if self.sequence_length < 2 || self.source_frames < self.sequence_length {
            return Err(Error::invalid("need 2 ≤ sequence_length ≤ source_frames"));
        }
        if !(self.speed_range[0] > 0.0 && self.speed_range[0] <= self.speed_range[1]) {
            return Err(Error::invalid("speed range must be positive and ordered"));
        }
        if !(self.rotation_range[0] >= 0.0 && self.rotation_range[0] <= self.rotation_range[1]) {
            return Err(Error::invalid("rotation range must be non-negative and ordered"));
        }
        self.noise.validate()
    }

    /// Deterministic pair for `seed`.
    pub fn pair(&self, seed: u64) -> Result<TrainingPair> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mode = MODES[rng.random_range(0..MODES.len())];
        let duration = self.source_frames as f64 / self.frame_rate;
        let speed = rng.random_range(self.speed_range[0]..=self.speed_range[1]);
        let mut traj = TrajectoryConfig::new(mode, speed * duration, duration, rng.random());
        traj.frame_rate = self.frame_rate;
        traj.rotation_amplitude = rng.random_range(self.rotation_range[0]..=self.rotation_range[1]);
        traj.center = [
            rng.random_range(-150.0..150.0),
            rng.random_range(-100.0..100.0),
            rng.random_range(450.0..800.0),
        ];
        let gt = generate_trajectory(&traj)?;
        let noise = NoiseConfig {
            seed: rng.random(),
            ..self.noise.clone()
        };
        let noisy = inject_noise_components(&gt, &noise)?;
        let start = rng.random_range(0..=gt.len() - self.sequence_length);
        let range = start..start + self.sequence_length;

        let crop = |s: &PoseSequence| -> Vec<PoseVector9> { s.poses()[range.clone()].iter().map(|p| p.to_vector9()).collect() };
        let noisy_crop = crop(&noisy.noisy);
        let params = NormalizationParams::new(self.spatial_scale, noisy_crop[0].p)?;
        Ok(TrainingPair {
            noisy: normalize_sequence(&noisy_crop, &params),
            clean: normalize_sequence(&crop(&gt), &params),
            biased: normalize_sequence(&crop(&noisy.bias_only), &params),
        })
    }
}
