use std::path::PathBuf;

/// Errors raised across sampling, weighting and estimation.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    /// Empty risk set, missing factor, or a sample inconsistent with its cohort.
    #[error("structural error: {0}")]
    Structure(String),

    #[error("model is not identifiable: {0}")]
    NotIdentifiable(String),

    #[error("singular or rank-deficient system: {0}")]
    Rank(String),

    #[error("no convergence after {iterations} iterations (trace: {trace:?})")]
    Convergence { iterations: usize, trace: Vec<f64> },

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("unknown level {level} for factor {factor}")]
    UnknownLevel { factor: String, level: f64 },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("{0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn csv(path: impl Into<PathBuf>, source: csv::Error) -> Self {
        Error::Csv {
            path: path.into(),
            source,
        }
    }
}
