use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("frequency {0} outside [0, 1)")]
    FrequencyOutOfRange(f64),

    #[error("path count {paths} exceeds antenna count {antennas}")]
    TooManyPaths { paths: usize, antennas: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("iterate diverged at iteration {iteration}: {reason}")]
    Diverged { iteration: usize, reason: String },

    #[error("ill-conditioned steering basis: {0}")]
    IllConditioned(String),

    #[error("matrix is not positive semidefinite (most negative eigenvalue {0:e})")]
    NotPsd(f64),

    #[error("matrix is not Hermitian (max asymmetry {0:e})")]
    NotHermitian(f64),

    #[error("zero reference signal: NMSE is undefined")]
    ZeroReference,

    #[error("bad scenario file format: {0}")]
    Format(String),

    #[error("scenario file truncated: {0}")]
    Truncated(String),

    #[error("scenario file inconsistent: {0}")]
    Inconsistent(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
