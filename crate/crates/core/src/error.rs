use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A value outside its documented domain (non-finite logit, label out of range, ...).
    #[error("invalid input: {0}")]
    Input(String),

    /// A caller broke a precondition of an operation.
    #[error("contract violation: {0}")]
    Contract(String),

    /// The adapter does not provide the requested capability.
    #[error("adapter `{adapter}` lacks capability: {capability}")]
    Capability { adapter: String, capability: String },

    #[error("adapter `{adapter}` failed: {message}")]
    Adapter { adapter: String, message: String },

    #[error(
        "exhaustive search would enumerate {count} hypotheses (guard {guard}); use beam search instead"
    )]
    ExplosionGuard { count: u128, guard: usize },

    #[error("training diverged at epoch {epoch}: {message}")]
    Divergence { epoch: usize, message: String },

    #[error("line {line}: {message}")]
    Record { line: usize, message: String },

    #[error("malformed model file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn adapter(adapter: &str, message: impl Into<String>) -> Self {
        Error::Adapter {
            adapter: adapter.to_string(),
            message: message.into(),
        }
    }

    pub(crate) fn capability(adapter: &str, capability: impl Into<String>) -> Self {
        Error::Capability {
            adapter: adapter.to_string(),
            capability: capability.into(),
        }
    }
}
