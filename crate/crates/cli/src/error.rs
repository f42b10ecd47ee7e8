use std::fmt;

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const IO: i32 = 1;
    pub const VALIDATION: i32 = 2;
    pub const NUMERIC: i32 = 3;
    pub const REPLICATE_OVERFLOW: i32 = 4;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Validation,
    Numeric,
    ReplicateOverflow,
    Io,
}

#[derive(Debug)]
pub struct CliError {
    pub kind: ErrorKind,
    pub message: String,
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn validation(message: impl Into<String>) -> Self {
        Self {
            kind: ErrorKind::Validation,
            message: message.into(),
        }
    }

    pub fn io(message: impl Into<String>) -> Self {
        Self {
            kind: ErrorKind::Io,
            message: message.into(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.kind {
            ErrorKind::Validation => exit::VALIDATION,
            ErrorKind::Numeric => exit::NUMERIC,
            ErrorKind::ReplicateOverflow => exit::REPLICATE_OVERFLOW,
            ErrorKind::Io => exit::IO,
        }
    }

    /// Attach a file or stage name to a library error.
    pub fn context(context: impl fmt::Display) -> impl FnOnce(pgsae::Error) -> Self {
        move |e| {
            let mut err = Self::from(e);
            err.message = format!("{context}: {}", err.message);
            err
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<pgsae::Error> for CliError {
    fn from(e: pgsae::Error) -> Self {
        let kind = if e.is_numeric() {
            ErrorKind::Numeric
        } else if matches!(e, pgsae::Error::Io(_)) {
            ErrorKind::Io
        } else {
            ErrorKind::Validation
        };
        Self {
            kind,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::io(e.to_string())
    }
}
