//! Experiment orchestration for the `varda` data-assimilation library:
//! configuration, datasets, trial fan-out, tuning and result files.

pub mod cli;
pub mod config;
pub mod datasets;
pub mod experiments;
pub mod report;
pub mod runner;
pub mod table;
pub mod tune;

pub use config::{Experiment, ExperimentConfig, SearchSpace, System};
