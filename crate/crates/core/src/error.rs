use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// A vector or matrix had the wrong size for the operation.
    #[error("dimension mismatch in {context}: expected {expected}, got {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },
    /// A caller broke a documented precondition.
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("gradient tape is invalid: {0}")]
    InvalidTape(&'static str),
    #[error("non-finite gradient in parameter `{param}`")]
    NonFiniteGradient { param: String },
    /// A loss or target became NaN/inf during training.
    #[error("training diverged at step {step}: {what}")]
    Training { step: usize, what: String },
    #[error("unsupported operation: {0}")]
    Unsupported(String),
}

impl Error {
    /// True for errors caused by bad inputs rather than by numerics.
    pub fn is_contract_violation(&self) -> bool {
        matches!(
            self,
            Error::DimensionMismatch { .. } | Error::Contract(_) | Error::InvalidTape(_)
        )
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn at_step(self, step: usize) -> Self {
        match self {
            Error::Training { what, .. } => Error::Training { step, what },
            Error::NonFiniteGradient { param } => Error::Training {
                step,
                what: alloc::format!("non-finite gradient in parameter `{param}`"),
            },
            other => other,
        }
    }
}

pub(crate) fn check_dim(context: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            context,
            expected,
            found,
        })
    }
}
