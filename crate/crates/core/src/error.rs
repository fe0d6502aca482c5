use thiserror::Error;

/// Errors produced by the estimation procedures and their supporting types.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Input(String),

    #[error("degenerate sample: {0}")]
    Degenerate(String),

    #[error("infeasible tube at index {index}: lower {lower} > upper {upper}")]
    Infeasible { index: usize, lower: f64, upper: f64 },

    #[error("internal error: {0}")]
    Internal(String),

    /// The squeezing loop ran out of iterations or hit the radius floor.
    /// The last fit is carried so callers can still report it.
    #[error("no adequate fit after {iterations} iterations: {reason}")]
    NotConverged {
        iterations: usize,
        reason: String,
        last: Box<crate::density::DensityResult>,
    },

    /// Spectral squeezing ran out of iterations or hit the radius floor.
    #[error("no adequate spectral fit after {iterations} iterations")]
    SpectralNotConverged {
        iterations: usize,
        last: Box<crate::spectral::SpectralResult>,
    },

    #[error("quantile table schema: {0}")]
    Schema(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn input<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Input(msg.into()))
}
