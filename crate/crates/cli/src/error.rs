use thiserror::Error;

/// Failures surfaced by the command-line driver, each mapped to an exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Parse(String),

    #[error("configuration error in `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("solver failure at q = {q}, omega = {omega}: {source}")]
    Solver {
        q: f64,
        omega: f64,
        #[source]
        source: dynhomog_core::Error,
    },

    #[error("branch {branch} not found at q = {q}: {message}")]
    BranchNotFound { q: f64, branch: usize, message: String },

    #[error("verification failed: {}", failed.join(", "))]
    VerifyFailed { failed: Vec<String> },

    #[error("i/o error on {path}: {message}")]
    Io { path: String, message: String },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Parse(_) | CliError::Config { .. } => 2,
            CliError::Solver { .. } => 3,
            CliError::BranchNotFound { .. } => 4,
            CliError::VerifyFailed { .. } => 5,
            CliError::Io { .. } => 1,
        }
    }

    pub fn solver(q: f64, omega: f64, source: dynhomog_core::Error) -> Self {
        CliError::Solver { q, omega, source }
    }
}
