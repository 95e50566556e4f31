//! Trajectory accuracy and reconstruction quality metrics.

pub mod report;
pub mod trajectory;
pub mod volume;

pub use report::{
    aggregate, write_error_series_csv, write_markdown_table, write_metrics_csv, MeanStd, MetricSet, MetricsRow, MetricsTable,
};
pub use trajectory::{
    error_series, pair_by_timestamp, trajectory_metrics, trajectory_metrics_with, DriftNormalization, ErrorSample,
    TrajectoryMetrics,
};
pub use volume::{dice, volume_metrics, VolumeMetrics, VoxelMask};
