//! Experiment runner: profile generation, training, evaluation, lambda
//! sweeps, baselines, audits and decompositions.

pub mod commands;
pub mod config;
pub mod error;
pub mod report;

pub use error::{CliError, CliResult};
