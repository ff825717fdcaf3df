use std::fmt;

/// Error class printed on failure, one token so scripts can match on it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Io,
    Parse,
    Snapshot,
    Internal,
}

impl fmt::Display for ErrorClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ErrorClass::Config => "config",
            ErrorClass::Io => "io",
            ErrorClass::Parse => "parse",
            ErrorClass::Snapshot => "snapshot",
            ErrorClass::Internal => "internal",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("error[{class}]: {message}")]
pub struct CliError {
    pub class: ErrorClass,
    pub message: String,
}

impl CliError {
    pub fn new(class: ErrorClass, message: impl Into<String>) -> Self {
        Self {
            class,
            message: message.into().replace('\n', " "),
        }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new(ErrorClass::Config, message)
    }

    pub fn io(message: impl Into<String>) -> Self {
        Self::new(ErrorClass::Io, message)
    }
}

impl From<hbrick::Error> for CliError {
    fn from(e: hbrick::Error) -> Self {
        use hbrick::Error as E;
        let class = match &e {
            E::InvalidConfig(_) => ErrorClass::Config,
            E::Io(_) => ErrorClass::Io,
            E::Parse { .. } => ErrorClass::Parse,
            E::Snapshot(_) => ErrorClass::Snapshot,
            _ => ErrorClass::Internal,
        };
        Self::new(class, e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::io(e.to_string())
    }
}
