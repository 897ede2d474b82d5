use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// Malformed case-file text.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// A structural invariant of the input does not hold.
    #[error("validation error: {0}")]
    Validation(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("singular Jacobian at iteration {iteration}")]
    SingularJacobian { iteration: usize },

    #[error("scenario generation exhausted: {accepted} of {requested} states after {attempts} attempts")]
    GenerationExhausted {
        requested: usize,
        accepted: usize,
        attempts: usize,
    },

    #[error("normalization statistics are not frozen")]
    NormNotFrozen,

    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Divergence { epoch: usize },

    #[error("negative radicand {value} in DDIM update")]
    NegativeRadicand { value: f64 },

    #[error("digest mismatch: model bound to {expected}, got {actual}")]
    DigestMismatch { expected: String, actual: String },

    #[error("empty sample set")]
    EmptySample,
}
