use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, LareError>;

#[derive(Debug, Error)]
pub enum LareError {
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("dataset is empty: {0}")]
    EmptyDataset(String),

    #[error("k-core filtering (k_user={k_user}, k_item={k_item}) removed every interaction")]
    EmptyAfterFilter { k_user: usize, k_item: usize },

    #[error("{what} dimension {n} exceeds the dense cap {cap}")]
    Capacity { what: &'static str, n: usize, cap: usize },

    #[error("matrix is not positive definite: factorization failed at pivot {pivot}")]
    NotPositiveDefinite { pivot: usize },

    #[error("matrix is not symmetric (max |a_ij - a_ji| = {max_asym:e})")]
    NotSymmetric { max_asym: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("cannot place {needed} noisy interactions: only {available} unobserved cells")]
    InsufficientZeroCells { needed: usize, available: usize },

    #[error("homophily ratio is undefined: no co-occurring item pairs")]
    UndefinedRatio,

    #[error("bad file format in {path}: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

/// Broad failure classes; the CLI maps these onto exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Numerical,
    Io,
}

impl LareError {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        LareError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        LareError::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            LareError::NotPositiveDefinite { .. }
            | LareError::NotSymmetric { .. }
            | LareError::Numerical(_)
            | LareError::UndefinedRatio => ErrorClass::Numerical,
            // a missing input file is a usage problem, not a failing disk
            LareError::Io { source, .. } if source.kind() == io::ErrorKind::NotFound => {
                ErrorClass::Usage
            }
            LareError::Io { .. } | LareError::Format { .. } => ErrorClass::Io,
            _ => ErrorClass::Usage,
        }
    }
}
