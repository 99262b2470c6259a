use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid {field}: {reason}")]
    InvalidParameter { field: &'static str, reason: String },

    #[error("box of {requested} vertices exceeds the capacity of {cap} vertices")]
    Capacity { requested: usize, cap: usize },

    #[error("invalid partition: {0}")]
    Partition(String),

    /// Cholesky pivot `pivot` was not strictly positive.
    #[error("matrix is not positive definite (pivot {pivot} = {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("overflow: {0}")]
    Overflow(String),

    #[error("singular network: {0}")]
    SingularNetwork(String),

    /// Fractional moment of order `s >= 1/2` of an inverse-Gamma(1/2) variable.
    #[error("moment of order s = {s} diverges (requires 0 < s < 1/2)")]
    Divergent { s: f64 },

    #[error("empty sample")]
    EmptySample,

    #[error("{0}")]
    Config(String),

    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("CSV error at {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

impl Error {
    pub(crate) fn param(field: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            field,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by an unlucky or ill-conditioned sample rather
    /// than by the caller.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NotPositiveDefinite { .. }
                | Error::Numerical(_)
                | Error::Overflow(_)
                | Error::SingularNetwork(_)
        )
    }
}
