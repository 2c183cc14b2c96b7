use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("singular field evaluation: point ({r}, {z}) lies on a filament of beam {beam}")]
    Singular { point: usize, beam: usize, r: f64, z: f64 },

    #[error("invalid geometry: {0}")]
    Geometry(String),

    #[error("dense beam {dense} is not contained in a single inference beam")]
    GeometryMismatch { dense: usize },

    #[error("degenerate MSE geometry: |denominator| = {0:e}")]
    DegenerateMse(f64),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("constrained prior sampling exhausted after {discarded} discarded chains")]
    Exhausted { discarded: usize, checkpoint: Option<PathBuf> },

    #[error("posterior is not finite at the optimiser seed")]
    NonFiniteSeed,

    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("all posterior weights underflow")]
    DegenerateWeights,

    #[error("missing artifact: {0}")]
    MissingArtifact(PathBuf),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error on {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json { path: path.into(), source }
    }

    /// Process exit status: 2 validation, 3 sampler exhaustion, 4 IO.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Exhausted { .. } | Error::DegenerateWeights => 3,
            Error::Io { .. } | Error::MissingArtifact(_) | Error::Csv(_) => 4,
            _ => 2,
        }
    }
}
