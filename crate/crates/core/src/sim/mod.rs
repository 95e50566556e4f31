//! Synthetic acquisitions: probe trajectories, tracker noise, tissue
//! phantoms, B-mode slices and depth-camera observations.

pub mod bundle;
pub mod depth;
pub mod noise;
pub mod phantom;
pub mod trajectory;

pub use bundle::{place_phantom_below, simulate_scan, FrameGeometry, ScanBundle, ScanManifest};
pub use depth::{observe_depth_centroid, CameraIntrinsics, DepthMap, DepthObservation};
pub use noise::{inject_noise, inject_noise_components, NoiseConfig, NoisyScan};
pub use phantom::{render_frame, Frame, Lesion, Phantom, Speckle, Vessel};
pub use trajectory::{generate_trajectory, TrajectoryConfig, TrajectoryMode};
