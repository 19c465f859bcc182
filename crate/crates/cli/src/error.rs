use std::fmt;

use deepseg::Error;

/// Process exit statuses.
pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;
pub const EXIT_WARNING: i32 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailureClass {
    Config,
    Io,
    Numeric,
}

impl FailureClass {
    pub fn exit_code(self) -> i32 {
        match self {
            FailureClass::Config => EXIT_CONFIG,
            FailureClass::Io => EXIT_IO,
            FailureClass::Numeric => EXIT_NUMERIC,
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub class: FailureClass,
    pub message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        CliError {
            class: FailureClass::Config,
            message: message.into(),
        }
    }

    pub fn io(message: impl Into<String>) -> Self {
        CliError {
            class: FailureClass::Io,
            message: message.into(),
        }
    }

    /// Prefixes a config field path, e.g. `train` + `epochs` -> `train.epochs`.
    pub fn in_section(err: Error, section: &str) -> Self {
        match err {
            Error::Config { field, msg } if !field.starts_with(section) => {
                CliError::config(format!("invalid config field `{section}.{field}`: {msg}"))
            }
            other => other.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

pub fn classify(err: &Error) -> FailureClass {
    match err.root() {
        Error::Io(_)
        | Error::BadMagic { .. }
        | Error::UnsupportedVersion(_)
        | Error::UnknownDtype(_)
        | Error::Truncated { .. }
        | Error::ExtentOverflow { .. }
        | Error::TrailingBytes(_) => FailureClass::Io,
        Error::NonFinite(_) | Error::NonFiniteLoss { .. } => FailureClass::Numeric,
        _ => FailureClass::Config,
    }
}

impl From<Error> for CliError {
    fn from(err: Error) -> Self {
        CliError {
            class: classify(&err),
            message: err.to_string(),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
