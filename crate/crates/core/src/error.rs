use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Inputs violate an operation's preconditions.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Inputs are well-formed but carry too little structure to compute a
    /// result (e.g. a mixture fit on constant data, a zero-area polygon).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// A floating-point computation left its valid domain.
    #[error("numerical degeneracy: {0}")]
    Numerical(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn degenerate(msg: impl Into<String>) -> Self {
        Error::Degenerate(msg.into())
    }

    pub(crate) fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }
}
