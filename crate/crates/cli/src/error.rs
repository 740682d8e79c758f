use std::fmt;
use std::path::Path;

/// Failure of a command, classified by exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags or configuration values. Exit 1.
    Usage(String),
    /// Non-finite values, divergence or a failed gradient check. Exit 2.
    Numerical(String),
    /// Unreadable, unwritable or malformed files. Exit 3.
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Numerical(_) => 2,
            CliError::Io(_) => 3,
        }
    }

    /// Any failure while reading or writing `path`.
    pub fn io(path: &Path, e: impl fmt::Display) -> Self {
        CliError::Io(format!("{}: {e}", path.display()))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<photoba::Error> for CliError {
    fn from(e: photoba::Error) -> Self {
        use photoba::Error as E;
        match e {
            E::NonFinite { .. } | E::Diverged { .. } | E::EmptyCost(_) => CliError::Numerical(e.to_string()),
            E::Io(_) | E::Parse { .. } | E::Unsupported(_) => CliError::Io(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}
