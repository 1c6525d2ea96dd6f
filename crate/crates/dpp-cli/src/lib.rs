//! Library behind the `dpp` binary: problem-file schema, bound reports, and
//! subcommand implementations. Kept as a library so integration tests can
//! drive the pipeline without spawning processes.

pub mod commands;
pub mod report;
pub mod schema;

/// CLI-level errors, split by exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad usage or a problem file that fails schema validation (exit 1).
    #[error("{0}")]
    Usage(String),
    /// Engine or numerical failure during a run (exit 2).
    #[error("{0}")]
    Engine(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Engine(_) => 2,
        }
    }
}

/// Exit code for a completed run whose bound checks failed.
pub const EXIT_BOUND_FAILURE: i32 = 3;
