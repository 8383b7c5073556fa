//! Measurement harness for the pruning pipeline: configuration, experiment
//! drivers, reports, mask export and fixture dumps.

pub mod config;
pub mod experiment;
pub mod fixture;
pub mod mask;
pub mod report;

pub use config::{Config, ConfigError};
pub use experiment::{Experiment, MaskEntry, RunOutput};
pub use fixture::{Fixture, Sidecar};
pub use report::{RunReport, TableReport};

/// Overrides the configured output directory.
pub const OUT_DIR_ENV: &str = "SCALEPRUNE_OUT_DIR";
