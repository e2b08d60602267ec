//! Error type shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    #[error("invalid basis: need num_basis >= order >= 2, got num_basis={num_basis}, order={order}")]
    InvalidBasis { num_basis: usize, order: usize },

    #[error("evaluation point {value} outside the basis domain [0, 1]")]
    OutOfDomain { value: f64 },

    #[error("invalid warp increments: {reason}")]
    InvalidWarp { reason: String },

    #[error("invalid model parameters: {reason}")]
    InvalidParams { reason: String },

    #[error("invalid curve `{id}`: {reason}")]
    InvalidCurve { id: String, reason: String },

    #[error("invalid dataset: {reason}")]
    InvalidDataset { reason: String },

    #[error("singular linear system in {context}")]
    Singular { context: String },

    #[error("{context}: no convergence after {iters} iterations ({detail})")]
    MaxIterations {
        context: String,
        iters: usize,
        detail: String,
    },

    #[error("non-finite value in {context} at iteration {iter}")]
    NonFinite { context: String, iter: usize },

    #[error("unknown curve id `{0}`")]
    UnknownCurve(String),

    #[error("quadrature oracle supports exactly one free warp increment (num_warp_basis = 3), got {0}")]
    UnsupportedOracle(usize),

    #[error("invalid clustering request: {reason}")]
    InvalidClustering { reason: String },

    #[error("invalid metric request: {reason}")]
    InvalidMetric { reason: String },

    #[error("csv parse error at line {line}: {reason}")]
    CsvFormat { line: u64, reason: String },

    #[error("invalid configuration: {reason}")]
    InvalidConfig { reason: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable category tag used by the CLI for exit codes and messages.
    pub fn category(&self) -> &'static str {
        match self {
            Error::InvalidBasis { .. }
            | Error::OutOfDomain { .. }
            | Error::InvalidWarp { .. }
            | Error::InvalidParams { .. }
            | Error::InvalidCurve { .. }
            | Error::InvalidDataset { .. }
            | Error::InvalidClustering { .. }
            | Error::InvalidMetric { .. } => "invalid-input",
            Error::Singular { .. }
            | Error::MaxIterations { .. }
            | Error::NonFinite { .. }
            | Error::UnsupportedOracle(_) => "numerical",
            Error::UnknownCurve(_) => "unknown-curve",
            Error::CsvFormat { .. } => "format",
            Error::InvalidConfig { .. } => "config",
            Error::Io { .. } | Error::Json(_) => "io",
        }
    }
}
