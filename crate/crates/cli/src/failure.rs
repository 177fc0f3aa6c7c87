//! Errors carrying the process exit code.

use std::fmt;

/// Exit codes. Stable across releases.
pub mod code {
    pub const GENERIC: u8 = 1;
    /// Dataset missing, or a command-line usage error.
    pub const DATASET_OR_USAGE: u8 = 2;
    pub const CHECKPOINT_VERSION: u8 = 3;
    pub const CONFIG: u8 = 4;
    pub const NON_FINITE: u8 = 5;
}

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn new(code: u8, message: impl Into<String>) -> Self {
        Failure {
            code,
            message: message.into(),
        }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new(code::CONFIG, message)
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Self::new(code::DATASET_OR_USAGE, message)
    }

    /// Prefixes the message with `context`, keeping the code.
    pub fn context(self, context: impl fmt::Display) -> Self {
        Failure {
            code: self.code,
            message: format!("{context}: {}", self.message),
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<hyperflux::Error> for Failure {
    fn from(e: hyperflux::Error) -> Self {
        use hyperflux::Error as E;
        let code = match &e {
            E::VersionMismatch { .. } => code::CHECKPOINT_VERSION,
            E::InvalidConfig(_) => code::CONFIG,
            E::NonFiniteLoss(_) | E::NonFiniteGradient(_) => code::NON_FINITE,
            _ => code::GENERIC,
        };
        Failure::new(code, e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::new(code::GENERIC, e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::new(code::GENERIC, e.to_string())
    }
}
