//! Experiment runner for GAN-based seizure prediction: synthetic data,
//! preprocessing, GAN and classifier training, evaluation and reports.

pub mod commands;
pub mod config;
pub mod data;
pub mod error;

pub use config::{ExperimentConfig, PatientConfig, Scenario};
pub use error::{CliError, CliResult};
