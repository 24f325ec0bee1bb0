use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Validation(String),
    #[error("solver: {0}")]
    Solver(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Validation(_) => 2,
            CliError::Solver(_) => 3,
        }
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Validation(format!("{}: {e}", path.display()))
    }
}

impl From<wizbook::bmc::BmcError> for CliError {
    fn from(e: wizbook::bmc::BmcError) -> Self {
        match e {
            wizbook::bmc::BmcError::Encode(e) => CliError::Validation(e.to_string()),
            other => CliError::Solver(other.to_string()),
        }
    }
}
