//! Error type shared across the crate.

use std::path::PathBuf;

/// Errors produced by signal construction, alignment, identification, and the
/// experiment harness.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An argument violates a documented precondition.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// A pulse cannot be represented on the sample grid.
    #[error("sample-rate resolution: {0}")]
    Resolution(String),

    /// Correlation peak too weak to trust the alignment.
    #[error("sync failed: peak metric {peak_db:.2} dB below floor {floor_db:.2} dB")]
    SyncFailure { peak_db: f64, floor_db: f64 },

    /// No usable driving pulse found for amplitude/phase calibration.
    #[error("calibration failed: {0}")]
    Calibration(String),

    /// Least-squares design matrix is rank deficient or numerically unusable.
    #[error("ill-conditioned design matrix (condition estimate {condition:.3e})")]
    IllConditioned { condition: f64 },

    /// Configuration file could not be parsed or failed validation.
    #[error("config: {0}")]
    Config(String),

    /// File I/O failure, with the offending path.
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
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

pub type Result<T> = std::result::Result<T, Error>;
