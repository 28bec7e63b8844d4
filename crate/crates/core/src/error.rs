use thiserror::Error;

/// Errors raised across the simulator.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum McqpError {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A register precondition of a circuit operator was not met.
    #[error("contract violation: {0}")]
    ContractViolation(String),

    /// Rejection sampling did not accept a candidate within the retry budget.
    #[error("reached maximum number of retries ({max_retries}) for path {path_index}, step {time_step}")]
    RetriesExhausted {
        path_index: u64,
        time_step: u64,
        max_retries: u32,
    },

    /// The requested register layout is too large to simulate.
    #[error("resource error: {0}")]
    Resource(String),

    /// The experiment configuration could not be parsed or validated.
    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for McqpError {
    fn from(err: std::io::Error) -> Self {
        McqpError::Io(err.to_string())
    }
}

pub type Result<T, E = McqpError> = std::result::Result<T, E>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(McqpError::Domain(msg.into()))
}
