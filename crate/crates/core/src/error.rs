use thiserror::Error;

/// Errors raised by the numerical routines of this crate.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("invalid matrix: {0}")]
    InvalidMatrix(String),

    #[error("argument outside its domain: {0}")]
    Domain(String),

    #[error("result out of floating-point range: {0}")]
    Range(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("{what} did not converge after {iterations} iterations (residual {residual:.3e})")]
    Convergence {
        what: String,
        iterations: usize,
        residual: f64,
        /// Last iterate, flattened.
        last: Vec<f64>,
    },

    #[error("integrator accuracy target missed: {0}")]
    Accuracy(String),

    #[error("singular velocity Hessian: {0}")]
    Singular(String),

    #[error("inconsistent initial momenta: {0}")]
    InvalidInitialization(String),

    #[error("minimizing endpoint left the search box: {0}")]
    SearchBoxExhausted(String),

    #[error("explicit scheme unstable: {0}")]
    Stability(String),

    #[error("fields cannot be compared: {0}")]
    InvalidComparison(String),
}

impl Error {
    pub(crate) fn convergence(what: impl Into<String>, iterations: usize, residual: f64, last: Vec<f64>) -> Self {
        Error::Convergence { what: what.into(), iterations, residual, last }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
