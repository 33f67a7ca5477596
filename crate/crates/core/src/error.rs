use std::io;

/// Errors produced by the engine, model codec, data loaders and trainer.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate batch-norm parameters: {0}")]
    DegenerateParameter(String),

    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u16, expected: u16 },

    #[error("arena too small: need {needed} bytes per buffer, have {available}")]
    Capacity { needed: usize, available: usize },

    #[error("inconsistent data: {0}")]
    Consistency(String),

    #[error("invalid network: {}", .0.join("; "))]
    InvalidNetwork(Vec<String>),

    #[error("model needs {needed} bytes but the budget is {budget}")]
    BudgetExceeded { needed: usize, budget: usize },

    #[error("training diverged at epoch {epoch}: {message}")]
    Training { epoch: usize, message: String },

    #[error("invalid option: {0}")]
    Option(String),

    #[error("template error: {0}")]
    Template(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn parse(offset: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            offset,
            message: msg.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
