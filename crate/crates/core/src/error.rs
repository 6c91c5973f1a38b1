use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("window too short: need at least {min} steps, got {len}")]
    WindowTooShort { len: usize, min: usize },

    #[error("patching error: length {len} is not divisible by patch length {patch}")]
    Patching { len: usize, patch: usize },

    #[error("vocabulary error: token id {id} outside vocabulary of size {size}")]
    Vocabulary { id: usize, size: usize },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("degenerate batch: {0}")]
    DegenerateBatch(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("training diverged at step {step}: {what} is not finite")]
    Divergence { step: usize, what: String },

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("undefined rate: final MSE is zero")]
    UndefinedRate,

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn dim(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::Dimension {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the command-line front end.
    ///
    /// 2: configuration or validation, 3: data, 4: numeric divergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_)
            | Error::Dimension { .. }
            | Error::Patching { .. }
            | Error::Vocabulary { .. }
            | Error::Precondition(_)
            | Error::Domain(_)
            | Error::Checkpoint(_) => 2,
            Error::WindowTooShort { .. }
            | Error::Dataset(_)
            | Error::Parse { .. }
            | Error::DegenerateBatch(_)
            | Error::UndefinedRate
            | Error::Io { .. } => 3,
            Error::Numeric(_) | Error::Divergence { .. } => 4,
        }
    }
}
