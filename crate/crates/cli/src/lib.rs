//! Experiment driver around the reconstruction library: scenario
//! configs, deterministic synthetic data, and reproducible run reports.

pub mod config;
pub mod gen_data;
pub mod report;
pub mod rng;
pub mod scenarios;
