use std::path::Path;

use oma_core::OmaError;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] OmaError),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("invalid config {path}: {source}")]
    Config {
        path: String,
        #[source]
        source: serde_json::Error,
    },

    /// A pipeline stage failed; `stage` names it.
    #[error("{stage} failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: OmaError,
    },
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Core(OmaError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    /// Process exit status: 2 usage, 3 data, 4 numerical or fit failure.
    pub fn exit_code(&self) -> i32 {
        let core = match self {
            CliError::Usage(_) => return 2,
            CliError::Config { .. } => return 3,
            CliError::Core(e) | CliError::Stage { source: e, .. } => e,
        };
        match core {
            OmaError::Usage(_) => 2,
            OmaError::Data(_) | OmaError::Io { .. } => 3,
            OmaError::Numerical { .. } | OmaError::FitFailure(_) | OmaError::Extraction(_) => 4,
        }
    }
}
