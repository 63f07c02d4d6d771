use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors produced by graph loading, embedding stores, diffusion and the
/// simulator. Everything user-facing funnels through this type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {path} at line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        expected: usize,
        found: usize,
        context: String,
    },

    #[error("no convergence after {rounds} rounds (last residual {residual:.3e})")]
    NonConvergence {
        rounds: usize,
        residual: f64,
        /// Residuals observed over the final rounds, oldest first.
        trace: Vec<f64>,
    },

    #[error("dataset exhausted: requested {requested} query pairs, accepted {accepted}")]
    DatasetExhausted { requested: usize, accepted: usize },

    #[error("numeric failure: {0}")]
    Numeric(String),
}
