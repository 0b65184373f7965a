//! Experiment runner for `mirrorflow`: JSON configuration, sweeps, CSV/JSON artifacts and SVG
//! charts.

pub mod commands;
pub mod config;
pub mod svg;
pub mod table;

pub use config::ExperimentConfig;
