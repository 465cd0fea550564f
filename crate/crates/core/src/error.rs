use thiserror::Error;

/// Errors raised anywhere in the translation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("spec error: {0}")]
    Spec(String),

    #[error("ingestion error: {0}")]
    Ingestion(String),

    /// A loss component went non-finite, or a training-side IO step failed.
    #[error("training error in `{component}`: {message}")]
    Training { component: String, message: String },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error(transparent)]
    Tensor(#[from] candle_core::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Safetensors(#[from] safetensors::SafeTensorError),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Shape(msg.into()))
}

pub(crate) fn validation_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Validation(msg.into()))
}
