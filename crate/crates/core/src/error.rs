use thiserror::Error;

/// Errors raised by the inference library.
#[derive(Debug, Error)]
pub enum NbvbError {
    /// An argument violated a documented precondition.
    #[error("domain error: {0}")]
    Domain(String),

    /// The spline basis could not be constructed from the supplied data.
    #[error("basis construction failed: {0}")]
    Construction(String),

    /// A prediction point fell outside the basis boundary.
    #[error("value {x} lies outside the basis domain [{lo}, {hi}]")]
    Extrapolation { x: f64, lo: f64, hi: f64 },

    /// A precision matrix failed its Cholesky factorization during a batch fit.
    #[error("precision matrix not positive definite at kappa = {kappa}, iteration {iteration}")]
    NotPositiveDefinite { kappa: f64, iteration: usize },

    /// A precision matrix failed its Cholesky factorization during an online update.
    #[error(
        "precision matrix not positive definite at kappa = {kappa}, observation {observation}"
    )]
    OnlineNotPositiveDefinite { kappa: f64, observation: u64 },

    /// A snapshot document was malformed or written by an incompatible version.
    #[error("snapshot error: {0}")]
    Snapshot(String),
}

pub type Result<T> = std::result::Result<T, NbvbError>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(NbvbError::Domain(msg.into()))
}
