use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor or array extents do not fit the operation.
    #[error("dimension error in {op}: {detail}")]
    Dimension { op: String, detail: String },

    /// Invalid configuration value (filter band, head count, weights, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// Input data violates a contract (non-finite samples, bad indices, ...).
    #[error("data error: {0}")]
    Data(String),

    /// API misuse such as a non-scalar loss or a second backward pass.
    #[error("contract error: {0}")]
    Contract(String),

    /// Geometry that admits no unique answer (collinear points, empty masks, zero ranges).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("rank deficient system: {constraints} constraints for {unknowns} unknowns")]
    Rank { constraints: usize, unknowns: usize },

    #[error("solver did not converge after {iterations} iterations (residual {residual:e})")]
    Solver { iterations: usize, residual: f64 },

    #[error("malformed {format} data: {detail}")]
    Format { format: &'static str, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn dim(op: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Dimension {
            op: op.into(),
            detail: detail.into(),
        }
    }

    pub fn format(format: &'static str, detail: impl Into<String>) -> Self {
        Error::Format {
            format,
            detail: detail.into(),
        }
    }

    /// True for errors caused by configuration rather than by the data being processed.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_) | Error::Json(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
