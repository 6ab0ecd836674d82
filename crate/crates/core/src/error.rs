use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Everything that can go wrong between loading inputs and emitting reports.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A malformed input file. `line` is 1-based and counts the header.
    #[error("{path}: {message} at line {line}")]
    Load {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{0}")]
    Alignment(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("infeasible configuration: {0}")]
    Infeasible(String),

    #[error("search space has {count} structures, exceeding the enumeration limit of {limit}")]
    SpaceTooLarge { count: u128, limit: u128 },

    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize },

    #[error("non-finite policy gradient")]
    NonFiniteGradient,

    #[error("accuracy of empty group undefined")]
    EmptyGroup,

    #[error("no episodes requested")]
    NoEpisodes,

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn load(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Load {
            path: path.into(),
            line,
            message: message.into(),
        }
    }

    /// Process exit code: 1 for I/O or validation failures, 2 for infeasible
    /// configurations, 3 when the enumeration guard trips.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Infeasible(_) => 2,
            Error::SpaceTooLarge { .. } => 3,
            _ => 1,
        }
    }
}
