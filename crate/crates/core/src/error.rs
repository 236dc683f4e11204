use thiserror::Error;

/// Errors raised across the simulator and the theory predictor.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("numerical failure after {iterations} iterations: {what}")]
    Numerical { what: String, iterations: usize },

    #[error("{what} is unstable: spectral radius {radius:.6} >= 1")]
    Instability { what: String, radius: f64 },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("all runs diverged in mode {0}")]
    AllDiverged(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
