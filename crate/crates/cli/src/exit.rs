use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use proptail_core::Error;

/// Stable exit statuses; success is 0.
pub const INTERNAL: u8 = 1;
pub const CONFIG: u8 = 2;
pub const DEGENERATE: u8 = 3;
pub const PRECONDITION: u8 = 4;

#[derive(Debug)]
pub enum CliError {
    Core(Error),
    Io { path: PathBuf, source: std::io::Error },
    /// Every step ran, but at least one check did not pass.
    ValidationFailed(String),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn exit_status(&self) -> u8 {
        match self {
            CliError::Core(e) => core_status(e),
            CliError::Io { .. } | CliError::ValidationFailed(_) => INTERNAL,
        }
    }

    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(self.exit_status())
    }
}

fn core_status(e: &Error) -> u8 {
    match e {
        Error::InvalidParameter { .. }
        | Error::MissingKey(_)
        | Error::Parse { .. }
        | Error::SkedasisNotPositive { .. }
        | Error::OutsideSupport { .. }
        | Error::DimensionMismatch { .. }
        | Error::BelowTailBranch { .. }
        | Error::BodyRegime { .. }
        | Error::InvalidTopK { .. }
        | Error::Unsupported(_)
        | Error::Csv(_) => CONFIG,
        Error::EmptySample
        | Error::NoExceedances { .. }
        | Error::EmptyWindow { .. }
        | Error::EstimationFailure(_)
        | Error::InsufficientExceedances => DEGENERATE,
        Error::Precondition { .. } => PRECONDITION,
        Error::MisalignedSupports | Error::TooFewValues { .. } => INTERNAL,
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Io { path, source } => write!(f, "{}: {source}", path.display()),
            CliError::ValidationFailed(msg) => write!(f, "validation failed: {msg}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}
