use thiserror::Error;

/// Errors produced anywhere in the training engine, density estimator and harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: dimension mismatch on axis {axis}: expected {expected}, got {got}")]
    Dimension {
        op: &'static str,
        axis: String,
        expected: usize,
        got: usize,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("parse error at byte offset {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("non-finite value at index {index}: {context}")]
    NonFinite { index: usize, context: String },

    #[error("label {label} out of range [0, {classes}) at batch index {index}")]
    LabelOutOfRange {
        index: usize,
        label: usize,
        classes: usize,
    },

    #[error("no parameters matched filter {0}")]
    EmptySelection(String),

    #[error("gradient requested under hard binning; use soft_triangular binning for training")]
    HardBinningGradient,

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("numerical abort at epoch {epoch}, step {step}{}: {message}", param.as_ref().map(|p| format!(" (parameter {p})")).unwrap_or_default())]
    Numeric {
        epoch: usize,
        step: usize,
        param: Option<String>,
        message: String,
    },

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn dim(op: &'static str, axis: impl Into<String>, expected: usize, got: usize) -> Self {
        Error::Dimension {
            op,
            axis: axis.into(),
            expected,
            got,
        }
    }

    pub fn with_context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// The innermost error once all context layers are peeled off.
    pub fn root(&self) -> &Error {
        match self {
            Error::Context { source, .. } => source.root(),
            other => other,
        }
    }

    /// True for failures caused by numerics during training rather than bad input.
    pub fn is_numeric(&self) -> bool {
        matches!(self.root(), Error::Numeric { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
