use thiserror::Error;

/// Errors produced by the quantile-regression routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A parameter lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Shapes of vectors or matrices do not agree.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A matrix that must be positive definite failed to factorize.
    #[error("matrix is not positive definite (leading minor {minor} of {size} is non-positive)")]
    NotPositiveDefinite { minor: usize, size: usize },

    /// The regression design is rank deficient.
    #[error("singular design matrix: {0}")]
    SingularDesign(String),

    /// Gradient training produced a non-finite loss.
    #[error("training diverged at epoch {epoch} (loss {loss}); try a smaller learning rate")]
    Divergence { epoch: usize, loss: f64 },

    /// The chain could not be started from the supplied state.
    #[error("initialization error: {0}")]
    Initialization(String),

    /// An operation was called on a state that cannot support it.
    #[error("state error: {0}")]
    State(String),

    /// Malformed input file.
    #[error("parse error at row {row}, column {column}: {message}")]
    Parse { row: usize, column: usize, message: String },

    /// Input file is missing a required column or is otherwise malformed.
    #[error("schema error: {0}")]
    Schema(String),

    /// A split or subset would be empty.
    #[error("size error: {0}")]
    Size(String),

    #[error("i/o error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
