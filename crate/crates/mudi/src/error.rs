use thiserror::Error;

/// Errors produced by the mudi library.
#[derive(Error, Debug)]
pub enum Error {
    /// A parameter lies outside its admissible domain.
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },

    /// A Newton iteration failed to reach the requested tolerance.
    #[error("{context}: no convergence after {iterations} iterations (residual {residual:.3e})")]
    Convergence {
        context: String,
        iterations: usize,
        residual: f64,
    },

    /// Incompatible autodiff usage (cross-tape mixing, shape mismatch, non-scalar root).
    #[error("autodiff usage error: {0}")]
    Autodiff(String),

    /// Array or sequence shapes do not line up.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A mesh violates a geometric precondition.
    #[error("mesh error: {0}")]
    Mesh(String),

    /// A state update failed inside a larger computation; carries the location.
    #[error("state update failed at path/point {sample}, step {step}: {source}")]
    StateUpdate {
        sample: usize,
        step: usize,
        #[source]
        source: Box<Error>,
    },

    /// Configuration file rejected.
    #[error("config error: {0}")]
    Config(String),

    /// A gradient became NaN during optimization.
    #[error("NaN gradient for parameter `{name}` at epoch {epoch}")]
    NanGradient { name: String, epoch: usize },

    /// Geometry generation exhausted its retry budget.
    #[error("{0}; adopt more conservative bounds")]
    GenerationRetries(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(name: &str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name: name.to_string(),
            reason: reason.into(),
        }
    }
}
