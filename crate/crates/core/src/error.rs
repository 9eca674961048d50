use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// An input violated an operation's precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Eigenvalue gap or singular matrix where a unique answer is required.
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// A physical quantity left its admissible domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// An iterative procedure failed to reach its tolerance.
    #[error("{what} did not converge after {iterations} iterations (residual {residual:.3e})")]
    Convergence {
        what: String,
        iterations: usize,
        residual: f64,
    },

    /// No self-consistent equilibrium exists for the requested parameters.
    #[error("initialization failed: {0}")]
    Initialization(String),

    /// A quadrature did not reach the requested accuracy.
    #[error("quadrature accuracy not reached: {what} (estimated relative error {estimate:.3e})")]
    Accuracy { what: String, estimate: f64 },

    /// Error raised while time stepping, tagged with the time at which it occurred.
    #[error("at tJ = {t}: {source}")]
    AtTime {
        t: f64,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Strips any time annotation and returns the underlying error.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtTime { source, .. } => source.root(),
            other => other,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
