use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("AP placement failed: AP {ap} not placed after {attempts} attempts (spacing {spacing} m too dense)")]
    Placement {
        ap: usize,
        attempts: u64,
        spacing: f64,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("F-ZF precoding requires N > tau_p (N = {antennas}, tau_p = {tau_p})")]
    PrecodingScheme { antennas: usize, tau_p: usize },

    #[error("shadow covariance factorization failed even after diagonal regularization")]
    Covariance,

    #[error("active AP set is empty")]
    EmptyActiveSet,

    #[error("no AP subset satisfies the SE requirements under the power caps")]
    Infeasible,

    #[error("exhaustive search limited to M <= {limit} APs, got {aps}")]
    TooManyAps { aps: usize, limit: usize },

    #[error("conic solver failed: {0}")]
    Solver(String),

    #[error("config error: {0}")]
    Config(String),

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
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
