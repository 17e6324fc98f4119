use diffcore::DiffError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] taanp::Error),
}

impl CliError {
    /// Process exit status: 2 config, 3 I/O and data integrity, 4 numeric,
    /// 5 anything else.
    pub fn exit_code(&self) -> i32 {
        use taanp::Error as E;
        match self {
            CliError::Config(_) => 2,
            CliError::Core(e) => match e {
                E::Config(_) => 2,
                E::Io { .. } | E::Parse { .. } | E::Integrity(_) => 3,
                E::Numeric(_) | E::UndefinedMetric(_) | E::Diff(DiffError::NonFinite(_)) => 4,
                E::Diff(DiffError::Config(_)) => 2,
                _ => 5,
            },
        }
    }
}
