use std::fmt;

/// Process exit status, one per failure class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exit {
    Io = 1,
    Config = 2,
    Dataset = 3,
    Evaluation = 4,
    Backend = 5,
}

impl Exit {
    pub fn code(self) -> i32 {
        self as i32
    }
}

/// An error with the exit status it should produce.
pub struct CliError {
    pub kind: Exit,
    pub error: anyhow::Error,
}

impl fmt::Debug for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}: {:#}", self.kind, self.error)
    }
}

impl From<anyhow::Error> for CliError {
    fn from(error: anyhow::Error) -> Self {
        CliError { kind: Exit::Io, error }
    }
}

pub type CliResult<T = ()> = Result<T, CliError>;

pub trait Classify<T> {
    fn or_exit(self, kind: Exit) -> CliResult<T>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn or_exit(self, kind: Exit) -> CliResult<T> {
        self.map_err(|e| CliError { kind, error: e.into() })
    }
}

pub fn fail<T>(kind: Exit, msg: impl fmt::Display) -> CliResult<T> {
    Err(CliError { kind, error: anyhow::anyhow!("{msg}") })
}
