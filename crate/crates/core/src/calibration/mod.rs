//! Temporal and spatial calibration of the ultrasound probe.

pub mod nwire;
pub mod spatial;
pub mod temporal;

pub use nwire::{default_wires, NWireProtocol, PixelNoise};
pub use spatial::{
    absolute_orientation, locate_middle_wire, solve_spatial_calibration, NWire, NWireDataset, NWireObservation,
    SpatialCalibration,
};
pub use temporal::{estimate_lag, LagEstimate, TemporalSignalPair, TimeSeries, TIME_SERIES_CSV_HEADER};
