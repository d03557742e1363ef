//! Simulation harness: synthetic reaching data for the two-link arm, L-sweeps over
//! the in-network pipeline, metrics and their persistence.

pub mod config;
pub mod dataset;
pub mod results;
pub mod sweep;
pub mod trajectory;
pub mod verify;

pub use config::{ExperimentConfig, MountingConfig, TimingMode};
pub use dataset::{synthesize_dataset, trial_seed};
pub use results::{emit_results, read_csv, spearman, summarize, write_csv, LengthSummary, Summary, CSV_HEADER};
pub use sweep::{metrics_from_trace, run_sweep, run_trial, MetricsRow, TimelinePoint};
pub use trajectory::{quintic_scalar, QuinticTrajectory, TrajectoryError};
pub use verify::{run_checks, CheckResult};
