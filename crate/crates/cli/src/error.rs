use gvs_core::GvsError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("parse error: {0}")]
    Parse(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("model error: {0}")]
    Model(GvsError),

    #[error("solver error: {0}")]
    Solver(GvsError),

    #[error("I/O error: {0}")]
    Io(String),
}

impl CliError {
    /// Process exit status for this error category.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Parse(_) | CliError::Usage(_) | CliError::Model(_) => 2,
            CliError::Solver(_) => 3,
            CliError::Io(_) => 4,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

pub(crate) trait SolverResult<T> {
    fn solver(self) -> Result<T, CliError>;
    fn model(self) -> Result<T, CliError>;
}

impl<T> SolverResult<T> for gvs_core::Result<T> {
    fn solver(self) -> Result<T, CliError> {
        self.map_err(CliError::Solver)
    }

    fn model(self) -> Result<T, CliError> {
        self.map_err(CliError::Model)
    }
}
