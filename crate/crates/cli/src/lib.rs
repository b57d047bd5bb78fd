//! Experiment workflow shared by the `chanest` binary and its tests.

pub mod chart;
pub mod config;
pub mod manifest;
pub mod pipeline;

pub use config::{ExperimentConfig, Profile};
pub use pipeline::ModelRef;
