//! Experiment runner around the perturbed forward-rate library: flat-file
//! configuration, deterministic orchestration, CSV/JSON artifacts with a
//! payload hash, and a plot-script generator.

pub mod config;
pub mod plot;
pub mod run;

pub use config::{ExperimentConfig, ExperimentKind};
pub use run::{run, CheckResult, RunError, RunReport};
