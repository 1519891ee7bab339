use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain an operation is defined on.
    #[error("domain error: {0}")]
    Domain(String),

    /// The effective 1D coupling diverges (confinement-induced resonance).
    #[error("confinement-induced resonance: 1 - C*a/l_perp = {denominator:e}")]
    Singularity { denominator: f64 },

    #[error("integration failed at t = {t} s: {reason}")]
    Integration { t: f64, reason: String },

    /// Every start of a multi-start fit failed to converge.
    #[error("fit failed: {reason} (best residual norm {best_residual:e})")]
    FitFailure { reason: String, best_residual: f64 },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
