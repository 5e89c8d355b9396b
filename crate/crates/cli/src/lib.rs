//! Batch front-end for the `kestenlab` numerics: a TOML run configuration,
//! pipeline stages writing canonical JSON and CSV artifacts, and a report.

pub mod canonical;
pub mod config;
pub mod error;
pub mod stages;

pub use config::{RunConfig, Stage};
pub use error::{CliError, CliResult};
pub use stages::{Report, Runner, StageRecord};
