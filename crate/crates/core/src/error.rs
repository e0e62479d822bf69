use crate::graph::ValidationReport;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid {field}: {value} (expected {expected})")]
    OutOfRange {
        field: &'static str,
        value: i64,
        expected: &'static str,
    },

    #[error("malformed location vector: {0}")]
    MalformedLocation(String),

    #[error("document error at {path}: {message}")]
    Document { path: String, message: String },

    #[error("graph failed validation:\n{0}")]
    InvalidGraph(ValidationReport),

    #[error("invalid request: {0}")]
    InvalidRequest(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("style transfer backend error: {0}")]
    Backend(String),

    #[error("non-finite loss term `{term}` at step {step}")]
    NonFinite { term: String, step: u64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Tensor(#[from] candle_core::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code for the command line front end.
    ///
    /// 0 success, 2 validation, 3 I/O, 4 numeric abort. Internal tensor
    /// failures map to 1.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::OutOfRange { .. }
            | Error::MalformedLocation(_)
            | Error::Document { .. }
            | Error::InvalidGraph(_)
            | Error::InvalidRequest(_)
            | Error::Shape(_)
            | Error::Alignment(_)
            | Error::Config(_) => 2,
            Error::Dataset(_)
            | Error::Checkpoint(_)
            | Error::Backend(_)
            | Error::Io(_)
            | Error::Image(_)
            | Error::Json(_) => 3,
            Error::NonFinite { .. } => 4,
            Error::Tensor(_) => 1,
        }
    }
}
