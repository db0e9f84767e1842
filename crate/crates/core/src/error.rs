use std::path::PathBuf;

/// Errors produced by the estimation toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("step response did not settle after {steps} steps")]
    NonConvergentGain { steps: usize },

    #[error("innovation covariance is not positive (S = {0})")]
    DegenerateInnovationCovariance(f64),

    #[error("retrospective update is ill-conditioned (condition number {0:e})")]
    IllConditionedUpdate(f64),

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("latitude offset {offset_deg:.4} deg exceeds the local projection bound")]
    OutOfProjection { offset_deg: f64 },

    #[error("degenerate run: only {retained} fixes retained")]
    DegenerateRun { retained: usize },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("configuration: {0}")]
    Validation(String),

    #[error("{channel} estimator diverged at step {step}: |u_hat| = {value:e}")]
    Divergence {
        channel: String,
        step: usize,
        value: f64,
    },

    #[error("incompatible reports: {0}")]
    IncompatibleReports(String),

    #[error("{path}: {source}")]
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

    /// Process exit code for the CLI: 2 for bad input, 3 for divergence, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Divergence { .. } | Error::IllConditionedUpdate(_) => 3,
            Error::Parse { .. }
            | Error::Validation(_)
            | Error::InvalidArgument(_)
            | Error::Dimension(_)
            | Error::DegenerateData(_)
            | Error::DegenerateRun { .. }
            | Error::OutOfProjection { .. }
            | Error::IncompatibleReports(_) => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
