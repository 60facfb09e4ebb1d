//! Exit-code contract: 0 success, 1 property failed, 2 usage or configuration,
//! 3 runtime or provider failure.

use std::fmt;

pub const PROPERTY_FAILED: u8 = 1;
pub const USAGE: u8 = 2;
pub const RUNTIME: u8 = 3;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub error: anyhow::Error,
}

pub type CliResult<T> = Result<T, CliError>;

pub fn usage(e: impl Into<anyhow::Error>) -> CliError {
    CliError { code: USAGE, error: e.into() }
}

pub fn runtime(e: impl Into<anyhow::Error>) -> CliError {
    CliError { code: RUNTIME, error: e.into() }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

impl From<embedcal::Error> for CliError {
    fn from(e: embedcal::Error) -> Self {
        use embedcal::Error as E;
        let code = match &e {
            E::Config(_)
            | E::Precondition(_)
            | E::Record { .. }
            | E::UnknownClassName(_)
            | E::InvalidClass { .. }
            | E::EmptyClass(_)
            | E::DimensionMismatch { .. }
            | E::UnresolvedPlaceholder(_) => USAGE,
            _ => RUNTIME,
        };
        CliError { code, error: e.into() }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        runtime(e)
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        runtime(e)
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        runtime(e)
    }
}
