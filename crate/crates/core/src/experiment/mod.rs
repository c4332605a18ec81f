//! Experiment harness: configuration, replicated runs against the Kalman
//! ground truth, and CSV reporting. The `segpf` binary is a thin wrapper
//! around this module.

pub mod config;
pub mod report;
pub mod runner;

pub use config::{EstimatorChoice, ExperimentConfig, InitKind, SamplerChoice};
pub use runner::{
    median_subsample_variance, mse_study, run_calibration, run_replicates, run_stability, run_subsample_sweep,
    run_table1, summarize, with_workers, Dataset, MseStudy, ReplicateRow, TargetSummary,
};
