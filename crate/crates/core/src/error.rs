use thiserror::Error;

pub type Result<T> = std::result::Result<T, OmaError>;

#[derive(Debug, Error)]
pub enum OmaError {
    /// Caller passed arguments that violate an operation's preconditions.
    #[error("usage error: {0}")]
    Usage(String),

    /// Malformed input data (signal files, configuration contents).
    #[error("data error: {0}")]
    Data(String),

    /// A linear system or expectation became degenerate during a fit.
    #[error("numerical failure in {stage} at iteration {iteration}: {message}")]
    Numerical {
        stage: &'static str,
        iteration: usize,
        message: String,
    },

    /// A damped-cosine fit could not explain a factor column.
    #[error("fit failure: {0}")]
    FitFailure(String),

    /// No factor column produced a usable mode.
    #[error("extraction failure: {0}")]
    Extraction(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl OmaError {
    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        OmaError::Usage(msg.into())
    }

    pub(crate) fn numerical(stage: &'static str, iteration: usize, msg: impl Into<String>) -> Self {
        OmaError::Numerical {
            stage,
            iteration,
            message: msg.into(),
        }
    }

    /// Attach an iteration index to a numerical failure raised without one.
    pub fn at_iteration(self, iteration: usize) -> Self {
        match self {
            OmaError::Numerical { stage, message, .. } => OmaError::Numerical {
                stage,
                iteration,
                message,
            },
            other => other,
        }
    }
}
