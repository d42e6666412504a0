use budis::BudisError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error(transparent)]
    Budis(#[from] BudisError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    /// 2 for bad inputs, 3 when the numerics fail.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Budis(e) if e.is_numerical() => 3,
            _ => 2,
        }
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Budis(e.into())
    }
}
