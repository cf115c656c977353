use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] cacheopt::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    /// 2 for anything the user can fix in the config, 3 when the instance is
    /// too large for the evaluation budget, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        use cacheopt::Error as E;
        match self {
            CliError::Config(_) => 2,
            CliError::Core(E::BudgetExceeded { .. } | E::ModelTooLarge { .. }) => 3,
            CliError::Core(
                E::InvalidInstance(_) | E::InvalidArgument(_) | E::DimensionMismatch { .. },
            ) => 2,
            _ => 1,
        }
    }
}
