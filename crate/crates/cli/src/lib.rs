//! Experiment harness: configuration, runs, ablations and artifact export.

pub mod config;
pub mod error;
pub mod report;
pub mod run;
pub mod synth;

pub use config::ExperimentConfig;
pub use error::CliError;
pub use report::Report;
pub use run::{eval_transfer_dir, run_experiment, RunOptions};
