use thiserror::Error;

use crate::learning::SavedModel;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("non-finite value produced by `{primitive}`")]
    NumericalFailure { primitive: &'static str },

    #[error("mass matrix is singular or ill-conditioned (condition number {condition:e})")]
    SingularMass { condition: f64 },

    #[error("integration failed at step {step}, stage {stage}")]
    Integration { step: usize, stage: usize },

    #[error("loss evaluation failed on sample {sample}: {source}")]
    Loss {
        sample: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("state outside the plant operating domain: {0}")]
    Domain(String),

    #[error("input matrix is rank deficient (smallest singular value {smallest:e}, largest {largest:e})")]
    RankDeficient { smallest: f64, largest: f64 },

    #[error("input matrix is singular")]
    SingularInput,

    #[error("training diverged at epoch {epoch}: {reason}")]
    Diverged {
        epoch: usize,
        reason: String,
        /// Parameters at the start of the failing epoch.
        last_good: Box<SavedModel>,
    },

    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { found: u64, expected: u64 },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("invalid configuration at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("{0}")]
    Invalid(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn dim(context: &'static str, expected: usize, got: usize) -> Self {
        Error::Dimension {
            context,
            expected,
            got,
        }
    }

    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }
}

pub(crate) fn check_len(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::dim(context, expected, got))
    }
}
