//! Run configuration, persistence, and command implementations behind the
//! `latnas` binary.

pub mod commands;
pub mod config;
pub mod report;

use latnas::controller::SearchError;
use latnas::explore::ExploreError;
use thiserror::Error;

pub use config::{EvaluatorConfig, Overrides, RunConfig};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("evaluator error: {0}")]
    Evaluator(String),
    #[error("guard violation: {0}")]
    Guard(String),
    /// The reader of our output went away (e.g. `| head`).
    #[error("output closed")]
    OutputClosed,
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::OutputClosed => 0,
            CliError::Config(_) | CliError::Io { .. } => 2,
            CliError::Evaluator(_) => 3,
            CliError::Guard(_) => 4,
        }
    }

    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

impl From<SearchError> for CliError {
    fn from(e: SearchError) -> Self {
        match e {
            SearchError::Eval { .. } | SearchError::Reward { .. } => CliError::Evaluator(e.to_string()),
            SearchError::Config(_) | SearchError::Codec(_) | SearchError::Io(_) => CliError::Config(e.to_string()),
        }
    }
}

impl From<ExploreError> for CliError {
    fn from(e: ExploreError) -> Self {
        match e {
            ExploreError::SpaceTooLarge { .. } => CliError::Guard(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}
