//! Experiment runner: JSON configs in, CSV/JSON artifacts out.

pub mod config;
pub mod runner;
