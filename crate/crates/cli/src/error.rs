use std::fmt;

use ev_energy::ErrorKind;

pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

/// A failure with the exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self { code: EXIT_USAGE, message: message.into() }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self { code: EXIT_DATA, message: message.into() }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<ev_energy::Error> for CliError {
    fn from(e: ev_energy::Error) -> Self {
        let code = match e.kind() {
            ErrorKind::Usage => EXIT_USAGE,
            ErrorKind::Data => EXIT_DATA,
            ErrorKind::Numeric => EXIT_NUMERIC,
        };
        Self { code, message: e.to_string() }
    }
}
