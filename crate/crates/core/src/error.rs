use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed or inconsistent input data (non-finite values, wrong shapes, ...).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Parameters outside their admissible range.
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("malformed file: {0}")]
    Format(String),

    /// The optimizer could not find a descent step and the objective blew up.
    #[error("diverged at iteration {iteration}: objective {objective:e} exceeds {limit:e}")]
    Divergence { iteration: usize, objective: f64, limit: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::ShapeMismatch(msg.into())
    }
}
