use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumError {
    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("tensor data length {len} does not match shape {shape:?}")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("non-finite value in {context}")]
    NonFinite { context: String },
    #[error("label must be 0 or 1, got {0}")]
    NonBinaryLabel(f64),
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("invalid network: {0}")]
    InvalidNet(String),
    #[error("checkpoint: bad magic bytes {0:?}")]
    BadMagic([u8; 4]),
    #[error("checkpoint: unsupported version {0}")]
    UnsupportedVersion(u32),
    #[error("checkpoint truncated at byte offset {offset}")]
    Truncated { offset: usize },
    #[error("checkpoint: invalid tensor name at byte offset {offset}")]
    InvalidName { offset: usize },
    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for NumError {
    fn from(e: std::io::Error) -> Self {
        NumError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, NumError>;
