//! Experiment runner: config files, the built-in experiments, CSV reports
//! and the acceptance suite behind `midpoint-lab verify`.

pub mod config;
pub mod dump;
pub mod error;
pub mod experiments;
pub mod report;
pub mod verify;

pub use config::{load_config, ExperimentConfig, ExperimentKind};
pub use error::{LabError, Result};
pub use report::Report;
