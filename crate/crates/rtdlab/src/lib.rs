//! Experiment harness around `rtdlab-core`: TOML configs with CLI
//! overrides, seeded multi-run orchestration, and reproducible output files.

pub mod cli;
pub mod config;
pub mod experiment;

pub use config::{Algo, ExperimentConfig, HarnessError, Resolved};
