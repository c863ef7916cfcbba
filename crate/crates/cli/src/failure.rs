//! Errors tagged with the process exit code they map to.

use std::fmt;
use std::process::ExitCode;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Config,
    Model,
    Data,
    Training,
}

impl Kind {
    pub fn code(self) -> u8 {
        match self {
            Kind::Config => 2,
            Kind::Model => 3,
            Kind::Data => 4,
            Kind::Training => 5,
        }
    }
}

#[derive(Debug)]
pub struct Failure {
    pub kind: Kind,
    pub error: anyhow::Error,
}

impl Failure {
    pub fn new(kind: Kind, error: impl Into<anyhow::Error>) -> Self {
        Self {
            kind,
            error: error.into(),
        }
    }

    pub fn msg(kind: Kind, message: impl fmt::Display) -> Self {
        Self::new(kind, anyhow::anyhow!("{message}"))
    }

    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(self.kind.code())
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

pub type CliResult<T> = Result<T, Failure>;

/// Tags an error with its exit code, with optional context.
pub trait OrFail<T> {
    fn or_fail(self, kind: Kind) -> CliResult<T>;
    fn or_fail_with(self, kind: Kind, context: impl FnOnce() -> String) -> CliResult<T>;
}

impl<T, E> OrFail<T> for Result<T, E>
where
    E: Into<anyhow::Error>,
{
    fn or_fail(self, kind: Kind) -> CliResult<T> {
        self.map_err(|e| Failure::new(kind, e))
    }

    fn or_fail_with(self, kind: Kind, context: impl FnOnce() -> String) -> CliResult<T> {
        self.map_err(|e| Failure::new(kind, e.into().context(context())))
    }
}
