use cgnsda_core::CgnsError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(String),

    #[error(transparent)]
    Numerical(CgnsError),

    #[error("check failed: {0}")]
    Check(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Io(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Check(_) => 4,
        }
    }

    pub fn io(path: &std::path::Path, e: std::io::Error) -> Self {
        CliError::Io(format!("{}: {e}", path.display()))
    }
}

/// Bad parameters are config errors; everything else from the library is
/// a numerical failure.
impl From<CgnsError> for CliError {
    fn from(e: CgnsError) -> Self {
        match e {
            CgnsError::Parameter(m) | CgnsError::ModelDefinition(m) => CliError::Config(m),
            CgnsError::Shape(m) => CliError::Config(format!("shape mismatch: {m}")),
            other => CliError::Numerical(other),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
