//! Configuration-driven experiment runner: strict TOML configs, shipped
//! presets, atomic artifact emission, and static SVG information-plane
//! plots.


// Numeric kernels here walk several parallel buffers by index; the
// iterator forms clippy prefers read worse for that pattern.
#![allow(clippy::needless_range_loop)]
pub mod config;
pub mod error;
pub mod plot;
pub mod presets;
pub mod run;

pub use config::ExperimentConfig;
pub use error::{CliError, Result};
pub use run::{run_experiment, validate_report, RunArtifacts};
