use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the simulator.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("svd did not converge within {sweeps} sweeps")]
    SvdNotConverged { sweeps: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("privacy mechanism invoked while differential privacy is disabled")]
    PrivacyDisabled,

    #[error("epsilon {epsilon} unattainable for sigma in [{lo}, {hi}]")]
    Unattainable { epsilon: f64, lo: f64, hi: f64 },

    #[error("partition failed: {0}")]
    Partition(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("config errors:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),

    #[error("malformed trace at line {line}: {reason}")]
    Trace { line: u64, reason: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short category label, used by the CLI for its exit status.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Shape { .. } | Error::NonFinite(_) | Error::SvdNotConverged { .. } => "numeric",
            Error::InvalidArgument(_) => "argument",
            Error::PrivacyDisabled | Error::Unattainable { .. } => "privacy",
            Error::Partition(_) | Error::Data(_) | Error::Csv(_) => "data",
            Error::Config(_) => "config",
            Error::Trace { .. } => "trace",
            Error::Io { .. } | Error::Json(_) => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
