use std::path::PathBuf;

pub type Result<T, E = CliError> = std::result::Result<T, E>;

/// Failures of the file-level tooling, with the process exit code each maps to.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] pfdiff_core::Error),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A CSV file does not have the expected header or row shape.
    #[error("schema error in {path} at row {row}: {message}")]
    Schema {
        path: PathBuf,
        row: usize,
        message: String,
    },

    /// Too many ingested rows failed the feasibility screen.
    #[error("{rejected} of {total} rows failed the feasibility screen (rows {rows:?})")]
    Feasibility {
        rejected: usize,
        total: usize,
        rows: Vec<usize>,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("digest mismatch for {what}: expected {expected}, found {actual}")]
    Digest {
        what: String,
        expected: String,
        actual: String,
    },

    /// A check on computed results did not hold.
    #[error("{0}")]
    Numerical(String),
}

pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        CliError::Format {
            path: path.into(),
            message: message.to_string(),
        }
    }

    /// 3 for non-convergence and divergence, 2 for everything else.
    pub fn exit_code(&self) -> i32 {
        use pfdiff_core::Error as E;
        match self {
            CliError::Core(
                E::SingularJacobian { .. }
                | E::GenerationExhausted { .. }
                | E::Divergence { .. }
                | E::NegativeRadicand { .. },
            )
            | CliError::Numerical(_) => EXIT_NUMERICAL,
            _ => EXIT_VALIDATION,
        }
    }
}
