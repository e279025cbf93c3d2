use thiserror::Error;

/// Errors raised across the depth pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// Operands whose shapes do not satisfy an operation's contract.
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    /// A precondition other than shape was violated.
    #[error("contract violation in {op}: {detail}")]
    Contract { op: &'static str, detail: String },

    /// The architecture could not be assembled.
    #[error("cannot build node {node}: {detail}")]
    Build { node: String, detail: String },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("data error: {0}")]
    Data(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err<T>(op: &'static str, detail: impl Into<String>) -> Result<T> {
    Err(Error::Shape {
        op,
        detail: detail.into(),
    })
}

pub(crate) fn contract_err<T>(op: &'static str, detail: impl Into<String>) -> Result<T> {
    Err(Error::Contract {
        op,
        detail: detail.into(),
    })
}
