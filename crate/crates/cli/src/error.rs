use std::fmt;
use std::io;

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const OTHER: i32 = 1;
    pub const CONFIG: i32 = 2;
    pub const DATA: i32 = 3;
    pub const NON_FINITE: i32 = 4;
}

/// A failure carrying the exit code it maps to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn new(code: i32, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new(exit::CONFIG, message)
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self::new(exit::DATA, message)
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<pcl_core::Error> for CliError {
    fn from(e: pcl_core::Error) -> Self {
        use pcl_core::Error as E;
        let code = match &e {
            E::Config(_) | E::Parameter(_) => exit::CONFIG,
            E::Data(_) | E::Format(_) | E::Dimension(_) => exit::DATA,
            E::Evaluation(_) => exit::NON_FINITE,
            E::Index(_) | E::State(_) | E::Io(_) => exit::OTHER,
        };
        Self::new(code, e.to_string())
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        Self::new(exit::OTHER, e.to_string())
    }
}
