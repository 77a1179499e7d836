use thiserror::Error;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Core(#[from] dric_core::Error),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = BenchError> = std::result::Result<T, E>;

impl BenchError {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        BenchError::Config(msg.into())
    }

    /// Process exit code: 1 for bad inputs, 2 for failures while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            BenchError::Config(_) => 1,
            BenchError::Core(e) if e.is_validation() => 1,
            BenchError::Core(dric_core::Error::Csv(_)) => 1,
            BenchError::Core(dric_core::Error::Io(e)) if e.kind() == std::io::ErrorKind::NotFound => 1,
            BenchError::Io(e) if e.kind() == std::io::ErrorKind::NotFound => 1,
            _ => 2,
        }
    }
}
