use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("provider `{provider}` failed: {message}")]
    Provider { provider: String, message: String },

    #[error("llm client failed: {0}")]
    Client(String),

    #[error("prompt pool: {0}")]
    PromptPool(String),

    #[error("format: {0}")]
    Format(String),

    #[error("config: {0}")]
    Config(String),

    #[error("training aborted at step {step}: {message}")]
    Training { step: u64, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Provider and client failures may succeed on a later attempt.
    pub fn is_retriable(&self) -> bool {
        matches!(self, Error::Provider { .. } | Error::Client(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
