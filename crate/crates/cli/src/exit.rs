use std::fmt;

pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NON_FINITE: i32 = 3;
pub const EXIT_SIM: i32 = 4;

/// A failure carrying the process exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn input(message: impl fmt::Display) -> Self {
        Self {
            code: EXIT_INPUT,
            message: message.to_string(),
        }
    }

    pub fn sim(message: impl fmt::Display) -> Self {
        Self {
            code: EXIT_SIM,
            message: message.to_string(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<kinebasis::Error> for CliError {
    fn from(e: kinebasis::Error) -> Self {
        let code = match e {
            kinebasis::Error::NonFiniteLoss { .. } => EXIT_NON_FINITE,
            _ => EXIT_INPUT,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::input(e)
    }
}

pub type CliResult<T = ()> = Result<T, CliError>;
