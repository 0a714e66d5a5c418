use thiserror::Error;

/// Errors raised while constructing domain values.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CoreError {
    #[error("unknown task `{0}`")]
    UnknownTask(String),
    #[error("unknown status label `{0}`")]
    UnknownStatus(String),
    #[error("document `{0}` has empty text")]
    EmptyDocument(String),
}
