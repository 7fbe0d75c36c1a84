use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("row {row} has (near-)zero norm and cannot be normalized")]
    DegenerateRow { row: usize },

    #[error("embedding for batch row {row} has zero norm before normalization")]
    DegenerateEmbedding { row: usize },

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("input text contains no tokens")]
    EmptyInput,

    #[error("data error: {0}")]
    Data(String),

    #[error("training diverged at step {step}: {detail}")]
    Divergence { step: usize, detail: String },

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("line {line}: {detail}")]
    Parse { line: usize, detail: String },

    #[error("line {line}: schema error: {detail}")]
    Schema { line: usize, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape { op, detail: detail.into() }
    }

    pub(crate) fn param(detail: impl Into<String>) -> Self {
        Error::Parameter(detail.into())
    }

    pub(crate) fn data(detail: impl Into<String>) -> Self {
        Error::Data(detail.into())
    }
}
