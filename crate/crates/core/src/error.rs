use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, Error)]
pub enum Error {
    /// Malformed input: bad model parameters, bad representation, size mismatch.
    #[error("invalid input: {0}")]
    Invalid(String),

    /// Argument outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A transform was evaluated outside its convergence strip.
    #[error("divergent transform: {0}")]
    Divergence(String),

    /// A documented precondition of the operation does not hold.
    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("singular system ({what}), condition number {condition:.3e}")]
    Singular { what: String, condition: f64 },

    /// Residual or convergence failure of an iterative or spectral method.
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("optimization failed: {message}")]
    Optimization {
        message: String,
        /// One entry per iterate: the residual vector.
        trace: Vec<Vec<f64>>,
    },
}

impl Error {
    /// Errors caused by the caller's input rather than by the numerics.
    pub fn is_validation(&self) -> bool {
        matches!(self, Error::Invalid(_) | Error::Domain(_) | Error::Divergence(_) | Error::Precondition(_))
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub(crate) fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }
}
