use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] qagt_core::Error),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("verification failed: {0}")]
    Verification(String),
}

impl CliError {
    /// 0 success, 1 verification or convergence failure, 2 configuration or
    /// domain error.
    pub fn exit_code(&self) -> i32 {
        use qagt_core::Error as E;
        match self {
            CliError::Verification(_) => 1,
            CliError::Core(E::Divergence { .. } | E::Saturation { .. } | E::NoConvergence { .. } | E::RateUndefined) => 1,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
