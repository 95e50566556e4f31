use std::path::{Path, PathBuf};

use mlrecon::calibration::NWireProtocol;
use mlrecon::compounding::CompoundingConfig;
use mlrecon::metrics::DriftNormalization;
use mlrecon::refiner::{BaselineFilter, RefineOptions, TrainConfig};
use mlrecon::se3::RigidTransform;
use mlrecon::sim::{place_phantom_below, FrameGeometry, NoiseConfig, Phantom, TrajectoryConfig, TrajectoryMode};
use mlrecon::tracking::{DetectorConfig, ProbeModel};
use serde::{Deserialize, Serialize};

/// One JSON document describing a run. Every section is optional; missing
/// fields take their defaults. The global `seed` is the only seed that is
/// read: section seeds are derived from it (trajectory `seed`, noise
/// `seed + 1`, speckle `seed + 2`, detector `seed + 3`, refiner training
/// and N-wire simulation `seed`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
    pub trajectory: TrajectorySection,
    pub noise: NoiseConfig,
    pub scene: SceneSection,
    pub probe: ProbeModel,
    pub detector: DetectorConfig,
    pub refiner_training: TrainConfig,
    pub refine: RefineSection,
    pub calibration: CalibrationSection,
    pub compounding: CompoundingConfig,
    pub metrics: MetricsSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            output_dir: None,
            trajectory: TrajectorySection::default(),
            noise: NoiseConfig::nominal(0),
            scene: SceneSection::default(),
            probe: ProbeModel::default(),
            detector: DetectorConfig::default(),
            refiner_training: TrainConfig::desk(),
            refine: RefineSection::default(),
            calibration: CalibrationSection::default(),
            compounding: CompoundingConfig::default(),
            metrics: MetricsSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrajectorySection {
    pub mode: TrajectoryMode,
    /// Path length, mm.
    pub total_distance: f64,
    /// Scan duration, s; when absent it is `total_distance / speed`.
    pub duration: Option<f64>,
    /// Mean probe speed, mm/s.
    pub speed: f64,
    pub frame_rate: f64,
    pub rotation_amplitude: f64,
    pub center: [f64; 3],
}

impl Default for TrajectorySection {
    fn default() -> Self {
        let base = TrajectoryConfig::new(TrajectoryMode::Linear, 250.0, 12.5, 0);
        TrajectorySection {
            mode: base.mode,
            total_distance: base.total_distance,
            duration: None,
            speed: 20.0,
            frame_rate: base.frame_rate,
            rotation_amplitude: base.rotation_amplitude,
            center: base.center,
        }
    }
}

/// A named phantom preset or a full phantom description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PhantomSpec {
    Preset(String),
    Custom(Phantom),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSection {
    /// `a`, `b`, `c`, `sphere`, or an explicit phantom. Presets are placed
    /// directly below the trajectory; an explicit phantom keeps its pose.
    pub phantom: PhantomSpec,
    pub frame_geometry: FrameGeometry,
    /// Render B-mode frames (pose-only bundles otherwise).
    pub render: bool,
}

impl Default for SceneSection {
    fn default() -> Self {
        SceneSection {
            phantom: PhantomSpec::Preset("a".into()),
            frame_geometry: FrameGeometry::default(),
            render: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefineSection {
    pub options: RefineOptions,
    /// Filter applied by `refine-apply --method baseline`.
    pub baseline: BaselineFilter,
}

impl Default for RefineSection {
    fn default() -> Self {
        RefineSection {
            options: RefineOptions::default(),
            baseline: BaselineFilter::Median { window: 5 },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationSection {
    /// Cross-correlation search range, s.
    pub max_lag_s: f64,
    pub nwire: NWireProtocol,
}

impl Default for CalibrationSection {
    fn default() -> Self {
        CalibrationSection {
            max_lag_s: 0.5,
            nwire: NWireProtocol::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsSection {
    pub fdr_normalization: DriftNormalization,
    /// Reconstructed voxels above this intensity form the segmented mask.
    pub volume_threshold: f32,
}

impl Default for MetricsSection {
    fn default() -> Self {
        MetricsSection {
            fdr_normalization: DriftNormalization::PathLength,
            volume_threshold: 130.0,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> mlrecon::Result<Self> {
        mlrecon::io::read_json(path)
    }

    pub fn trajectory_config(&self) -> TrajectoryConfig {
        let t = &self.trajectory;
        TrajectoryConfig {
            mode: t.mode,
            total_distance: t.total_distance,
            duration: t.duration.unwrap_or(t.total_distance / t.speed),
            frame_rate: t.frame_rate,
            rotation_amplitude: t.rotation_amplitude,
            seed: self.seed,
            center: t.center,
        }
    }

    pub fn noise_config(&self) -> NoiseConfig {
        NoiseConfig {
            seed: self.seed.wrapping_add(1),
            ..self.noise.clone()
        }
    }

    pub fn frame_geometry(&self) -> FrameGeometry {
        let mut g = self.scene.frame_geometry.clone();
        if let Some(s) = &mut g.speckle {
            s.seed = self.seed.wrapping_add(2);
        }
        g
    }

    pub fn detector_config(&self) -> DetectorConfig {
        DetectorConfig {
            seed: self.seed.wrapping_add(3),
            ..self.detector
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.refiner_training.clone()
        }
    }

    pub fn nwire_protocol(&self) -> NWireProtocol {
        NWireProtocol {
            seed: self.seed,
            ..self.calibration.nwire.clone()
        }
    }

    pub fn phantom(&self) -> mlrecon::Result<Phantom> {
        let id = RigidTransform::identity();
        let preset = match &self.scene.phantom {
            PhantomSpec::Custom(p) => return Ok(p.clone()),
            PhantomSpec::Preset(name) => match name.as_str() {
                "a" => Phantom::preset_a(id),
                "b" => Phantom::preset_b(id),
                "c" => Phantom::preset_c(id),
                "sphere" => Phantom::sphere([120.0, 40.0, 40.0], [60.0, 20.0, 18.0], 10.0, id),
                other => {
                    return Err(mlrecon::Error::InvalidInput(format!(
                        "unknown phantom preset `{other}` (expected a, b, c or sphere)"
                    )))
                }
            },
        };
        Ok(place_phantom_below(preset, self.trajectory.center))
    }
}
