//! Files, configuration, the experiment runner and the command line around
//! [`cfa_core`].

pub mod cli;
pub mod config;
pub mod experiment;
pub mod io;
pub mod report;
pub mod score;
pub mod svg;

pub use config::ExperimentConfig;
pub use experiment::{run_experiment, RunManifest};
