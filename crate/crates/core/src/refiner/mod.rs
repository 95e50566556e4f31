//! Two-stage dilated temporal convolutional pose denoiser.
//!
//! Stage 1 (dilations 1–16) predicts the high-frequency residual and
//! subtracts it; stage 2 (dilations 1–128) sees the input, the stage-1
//! output and stage-1 features and subtracts the low-frequency residual.

pub mod arch;
pub mod baselines;
pub mod data;
pub mod infer;
pub mod loss;
pub mod network;
pub mod train;

pub use arch::{Activation, RefinerArchitecture, RefinerModel};
pub use baselines::{baseline_filter, BaselineFilter};
pub use data::{PairGenerator, TrainingPair};
pub use infer::{
    frequency_separation_signal, high_frequency_energy_fraction, refine, refine_normalized, residuals, RefineOptions,
    JITTER_CUTOFF_HZ,
};
pub use loss::{composite_loss, LossBreakdown, LossWeights};
pub use network::{forward, stage1_forward, stage2_forward, RefinerOutput};
pub use train::{train, train_from, TrainConfig, TrainingLog};
