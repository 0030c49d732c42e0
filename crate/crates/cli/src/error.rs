use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("{0}")]
    Usage(String),

    #[error("audit failed: {0} agent(s) gain more than the tolerance")]
    AuditFailed(usize),

    #[error(transparent)]
    Core(#[from] matchnet::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CliError {
    /// 1 for validation problems, 2 for numeric failures, 3 for I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io(_) => 3,
            CliError::Core(e) if e.is_io() => 3,
            CliError::Core(e) if e.is_numeric() => 2,
            _ => 1,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => CliError::Io(io),
            other => CliError::Io(std::io::Error::other(format!("{other:?}"))),
        }
    }
}
