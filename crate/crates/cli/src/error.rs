use std::path::Path;
use std::process::ExitCode;

/// A failure classified by who has to fix it.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags, config or missing inputs.
    Usage(String),
    /// Input files that parse but violate the data contracts.
    Data(String),
    /// The filesystem or network.
    Env(String),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Env(_) => 4,
        })
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Env(m) => m,
        }
    }
}

impl From<comatch_core::Error> for CliError {
    fn from(e: comatch_core::Error) -> Self {
        use comatch_core::Error as E;
        match e {
            E::Config(_) | E::Completeness(_) => CliError::Usage(e.to_string()),
            E::Io { .. } => CliError::Env(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

pub type CliResult<T = ()> = Result<T, CliError>;

/// Fail with a usage error unless the input file exists.
pub fn input(path: &Path) -> CliResult<&Path> {
    if path.is_file() {
        Ok(path)
    } else {
        Err(CliError::Usage(format!("input file not found: {}", path.display())))
    }
}
