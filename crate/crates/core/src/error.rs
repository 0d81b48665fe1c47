use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the refinement pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("rectangle {rect} exceeds {edge} edge of {height}x{width} raster")]
    Bounds {
        rect: String,
        edge: &'static str,
        height: usize,
        width: usize,
    },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid geometry: {0}")]
    Geometry(String),
    #[error("pixel ({y}, {x}) is not covered by any patch")]
    Coverage { y: usize, x: usize },
    #[error("expected {expected} patches, got {got}")]
    Arity { expected: usize, got: usize },
    #[error("metric undefined: {0}")]
    Metric(String),
    #[error("scale-shift alignment is degenerate: {0}")]
    Alignment(String),
    #[error("parse error at byte {offset}: {msg}")]
    Parse { offset: usize, msg: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Numeric(_) => 4,
            _ => 3,
        }
    }
}
