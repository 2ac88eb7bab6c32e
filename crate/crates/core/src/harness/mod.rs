//! Metrics, in-process simulation and the experiment runner.

pub mod metrics;
pub mod simulate;

pub use metrics::{binary_entropy, efficiency, performance_rate, secret_bits_per_frame, SessionMetrics};
pub use simulate::{session_metrics, simulate, SimOptions, SimRun};
pub mod experiment;

pub use experiment::{run_experiment, table_one, Cell, CellSummary, ExperimentConfig, ExperimentReport, TableRow};
