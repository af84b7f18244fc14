use thiserror::Error;

/// Errors raised anywhere in the segmentation stack.
#[derive(Debug, Error)]
pub enum Error {
    /// Two inputs that must share a grid (or vector length) do not.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A value or configuration violates its stated contract.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Malformed PGM/PFM content.
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// An iterative solver ran out of budget. `residuals` carries the best values reached.
    #[error(
        "{solver} did not converge after {iterations} iterations (best residuals {residuals:?})"
    )]
    NonConvergence {
        solver: &'static str,
        iterations: usize,
        residuals: Vec<f64>,
    },

    /// Thresholding was asked to split an input with no usable contrast.
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// The dense oracle refuses matrices beyond its size limit.
    #[error("problem too large: n = {n} exceeds limit {limit}")]
    TooLarge { n: usize, limit: usize },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn parse(offset: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            offset,
            message: message.into(),
        }
    }
}
