//! Experiment orchestration: configs, seeded runs, episodic evaluation with
//! confidence intervals, CSV metrics, checkpoints, and gap curves.

mod checkpoint;
mod config;
mod eval;
mod experiment;
mod metrics;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use config::{EvalSettings, ExperimentConfig, Metric, SourceSpec};
pub use eval::evaluate;
pub use experiment::{run_experiment, run_experiment_segment, RunOutcome};
pub use metrics::{confidence_interval, fmt_sig, gap_curve, CsvWriter, MetricsRecord, CSV_HEADER};
