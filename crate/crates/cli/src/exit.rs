use std::fmt;

use amodal_core::Error;

/// Process exit codes.
pub mod code {
    pub const OK: u8 = 0;
    /// Runtime failure: numerical trouble, undefined metrics, failed self-test.
    pub const RUNTIME: u8 = 1;
    /// Invalid configuration, flags or contract violation.
    pub const CONFIG: u8 = 2;
    pub const IO: u8 = 3;
    /// Checkpoint version or corpus hash mismatch.
    pub const MISMATCH: u8 = 4;
    /// Malformed or missing input data.
    pub const DATA: u8 = 5;
}

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn new(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new(code::CONFIG, message)
    }

    pub fn io(message: impl Into<String>) -> Self {
        Self::new(code::IO, message)
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self::new(code::DATA, message)
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        Self::new(code::RUNTIME, message)
    }

    pub fn from_core(e: Error) -> Self {
        let code = match &e {
            Error::Io { .. } => code::IO,
            Error::Mismatch(_) => code::MISMATCH,
            Error::Contract(_) | Error::Shape { .. } | Error::Json(_) => code::CONFIG,
            Error::Format(_) | Error::Mesh(_) | Error::EmptyObject | Error::DegenerateVisibility => code::DATA,
            Error::Undefined(_) | Error::ErosionAnnihilated => code::RUNTIME,
        };
        Self::new(code, e.to_string())
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        Self::from_core(e)
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}
