//! Batch front end: configuration parsing, subcommand orchestration and
//! deterministic CSV output.

pub mod config;
pub mod properties;
pub mod run;

pub use config::{parse_config, Command, ConfigError, Preset, RunConfig};
pub use run::{run, RunOutput};
