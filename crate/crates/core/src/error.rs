use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Every failure the engine can report.
///
/// The variants line up with the CLI exit-code classes: `Config`/`Spec`/`Contract`
/// are usage problems, `Parse`/`Image`/`Io`/`Checkpoint` are data problems, and
/// `Verification` is a failed numerical check.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("network spec error: {0}")]
    Spec(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("graph error at node {node}: {detail}")]
    Graph { node: String, detail: String },

    #[error("state error: {0}")]
    State(String),

    #[error("parse error for {name:?}: {reason}")]
    Parse { name: String, reason: String },

    #[error("image error for {path}: {reason}")]
    Image { path: PathBuf, reason: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFinite { epoch: usize, batch: usize },

    #[error("verification failed: {0}")]
    Verification(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension {
            op,
            detail: detail.into(),
        }
    }
}
