//! Runner for the bundled end-to-end examples: each builds a model, runs
//! inference and criticism, and writes CSV/JSON artifacts.

pub mod config;
pub mod data;
pub mod examples;
pub mod output;

pub use config::{Algo, Example, RunConfig};
pub use examples::{run, Report};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("ragged rows: line {line} has {found} fields, expected {expected}")]
    RaggedRows { line: usize, expected: usize, found: usize },
    #[error("i/o error: {0}")]
    Io(String),
    #[error(transparent)]
    Model(#[from] probgraph::Error),
}

impl CliError {
    /// Process exit status: 2 for bad configuration or input, 1 for
    /// failures during the run.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Parse { .. } | CliError::RaggedRows { .. } => 2,
            CliError::Io(_) | CliError::Model(_) => 1,
        }
    }
}
