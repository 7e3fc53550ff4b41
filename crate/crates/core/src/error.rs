use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = HedgeError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum HedgeError {
    #[error("domain error: {0}")]
    Domain(String),

    /// Inputs for which a closed form degenerates (expiry, zero volatility).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("price {price} outside no-arbitrage bounds ({lower}, {upper})")]
    Bounds { price: f64, lower: f64, upper: f64 },

    #[error("no convergence after {iterations} iterations")]
    Convergence { iterations: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("index {index} out of range for length {len}")]
    Index { index: usize, len: usize },

    #[error("schema error: missing columns {}", .0.join(", "))]
    Schema(Vec<String>),

    #[error("format error: {0}")]
    Format(String),

    #[error("invalid configuration: {}", .0.join("; "))]
    Config(Vec<String>),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl HedgeError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HedgeError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            HedgeError::Config(_) | HedgeError::Argument(_) | HedgeError::Schema(_) => 2,
            HedgeError::Io { .. } | HedgeError::Format(_) => 3,
            HedgeError::Domain(_)
            | HedgeError::Degenerate(_)
            | HedgeError::Bounds { .. }
            | HedgeError::Convergence { .. }
            | HedgeError::Shape(_)
            | HedgeError::Index { .. } => 4,
        }
    }
}
