use thiserror::Error;

/// Errors raised by the simulator, the oracles and the experiment runner.
#[derive(Debug, Error)]
pub enum SimError {
    /// Invalid input supplied by the caller or the config file.
    #[error("configuration error: {0}")]
    Config(String),
    /// Internal inconsistency during a run (event-trace corruption, policy bug).
    #[error("runtime fault: {0}")]
    Fault(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl SimError {
    pub fn config(msg: impl Into<String>) -> Self {
        SimError::Config(msg.into())
    }

    pub fn fault(msg: impl Into<String>) -> Self {
        SimError::Fault(msg.into())
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        SimError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, SimError>;
