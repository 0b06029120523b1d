//! Pipeline orchestration behind the `newsim` binary.

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;

pub use commands::{Artifacts, Context, EvalSplit, SignificanceOutput};
pub use config::PipelineConfig;
pub use error::{CliError, CliResult};
pub use manifest::RunManifest;
