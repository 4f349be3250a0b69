use thiserror::Error;

pub type Result<T> = std::result::Result<T, McsaError>;

#[derive(Debug, Error)]
pub enum McsaError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Every CIS candidate has zero importance weight.
    #[error("unsupported chain state: all importance weights are zero")]
    UnsupportedState,

    /// The retained state has zero density under the current proposal.
    #[error("previous state has zero proposal density under the current fit")]
    OutsideProposalSupport,

    #[error("non-finite gradient")]
    NonFiniteGradient,

    #[error("target does not provide a gradient of its log-density")]
    MissingGradient,

    #[error("target cannot be sampled directly")]
    NotSampleable,

    #[error("config error at line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("csv error: {0}")]
    Csv(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl McsaError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        McsaError::InvalidParameter(msg.into())
    }

    pub(crate) fn config(line: usize, message: impl Into<String>) -> Self {
        McsaError::Config {
            line,
            message: message.into(),
        }
    }
}

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(McsaError::DimensionMismatch { expected, found })
    }
}
