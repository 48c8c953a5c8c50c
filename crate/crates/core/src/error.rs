use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("rank deficient: {0}")]
    RankDeficient(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("schema error at line {line}: {message}")]
    Schema { line: usize, message: String },

    #[error(
        "training failed after {epochs} epochs (final loss {final_loss:.6}, target {target:.6})"
    )]
    TrainingFailure {
        epochs: usize,
        final_loss: f64,
        target: f64,
        /// Loss recorded at regular intervals during training.
        loss_trace: Vec<f64>,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Process exit code: 2 for anything the caller can fix by changing
    /// inputs or configuration, 1 for internal failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidInput(_)
            | Error::InsufficientData(_)
            | Error::RankDeficient(_)
            | Error::UndefinedMetric(_)
            | Error::Schema { .. }
            | Error::Io { .. } => 2,
            Error::TrainingFailure { .. } | Error::Numerical(_) => 1,
        }
    }
}
