//! Configuration loading and experiment execution for the `swapq` binary.

pub mod config;
pub mod experiment;

pub use config::{ConfigError, ExperimentConfig, TraceLevel};
pub use experiment::{read_grid_csv, run_experiment, ExperimentError, ExperimentOutcome, GridRow, RunOptions};
