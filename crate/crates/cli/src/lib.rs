//! Experiment driver for noisy-label training: flag and config-file parsing,
//! trial orchestration, and CSV/JSON outputs.

pub mod config;
pub mod error;
pub mod run;

pub use config::{parse_config, Args, RunManifest};
pub use error::{CliError, CliResult};
pub use run::{execute, run, summarize, sweep, Summary, CSV_HEADER};
