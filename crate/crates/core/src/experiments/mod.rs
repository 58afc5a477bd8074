//! Targets, datasets, scaling sweeps and slope fits.

pub mod data;
pub mod slope;
pub mod sweep;
pub mod targets;

pub use data::{friedman, load_csv, sample_target, Dataset, Normalization, Provenance};
pub use slope::{fit_slope, Axis, Exclusion, ExclusionReason, SlopeFit};
pub use sweep::{
    initial_params, monotonicity_violations, records_from_csv, records_to_csv, scaling_sweep,
    ScalingRecord, DEFAULT_RESTARTS, DEFAULT_WIDTHS,
};
pub use targets::{target_1d, target_2d};

pub use crate::train::StopReason;
