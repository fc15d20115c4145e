use std::path::PathBuf;

use privrisk_core::Error as CoreError;

/// Process exit status for a successful run.
pub const EXIT_OK: i32 = 0;
/// Unreadable or unwritable files.
pub const EXIT_IO: i32 = 1;
/// Malformed input data, configuration or parameters.
pub const EXIT_VALIDATION: i32 = 2;
/// Numerical failure (infeasible linearization, singular matrices, non-convergence).
pub const EXIT_NUMERICAL: i32 = 3;
/// The requested quantity does not exist (e.g. no default threshold matches the target).
pub const EXIT_NO_SOLUTION: i32 = 4;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Input { path: PathBuf, message: String },

    #[error("configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Model(#[from] CoreError),

    /// The run finished but its result is unusable; the report was still written.
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn input(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        CliError::Input {
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io { .. } => EXIT_IO,
            CliError::Input { .. } | CliError::Config(_) => EXIT_VALIDATION,
            CliError::Numerical(_) => EXIT_NUMERICAL,
            CliError::Model(e) => match e {
                CoreError::NonPositiveInput { .. } | CoreError::InvalidParams(_) | CoreError::InvalidArgument(_) => {
                    EXIT_VALIDATION
                }
                CoreError::NoSolution(_) => EXIT_NO_SOLUTION,
                CoreError::InfeasibleLinearization { .. }
                | CoreError::IllConditionedInnovation { .. }
                | CoreError::DegenerateDesign(_)
                | CoreError::NotPositiveDefinite { .. }
                | CoreError::NonConvergence(_) => EXIT_NUMERICAL,
            },
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
