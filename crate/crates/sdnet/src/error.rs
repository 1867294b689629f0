use std::path::Path;

/// Failure of a command, carrying the process exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numeric(String),
}

impl CliError {
    /// 2 usage/config, 3 data, 4 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }

    /// A configured path that cannot be opened, named by its config field.
    pub fn unreadable(field: &str, path: &Path, err: std::io::Error) -> Self {
        CliError::Usage(format!("{field}: cannot read {}: {err}", path.display()))
    }

    pub fn io(what: &str, path: &Path, err: std::io::Error) -> Self {
        CliError::Data(format!("{what} {}: {err}", path.display()))
    }

    pub fn context(self, prefix: &str) -> Self {
        match self {
            CliError::Usage(m) => CliError::Usage(format!("{prefix}: {m}")),
            CliError::Data(m) => CliError::Data(format!("{prefix}: {m}")),
            CliError::Numeric(m) => CliError::Numeric(format!("{prefix}: {m}")),
        }
    }
}

impl From<sdnet_core::Error> for CliError {
    fn from(e: sdnet_core::Error) -> Self {
        use sdnet_core::Error as E;
        match e {
            E::Usage(_) | E::Parameter(_) => CliError::Usage(e.to_string()),
            E::Numeric(_) => CliError::Numeric(e.to_string()),
            E::Data(_) | E::Alignment(_) | E::Dimension(_) => CliError::Data(e.to_string()),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
