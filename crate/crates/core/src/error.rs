use thiserror::Error;

/// Invalid parameters supplied when building a structure.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("invalid configuration: {0}")]
pub struct ConfigError(pub String);

impl ConfigError {
    pub(crate) fn new(msg: impl Into<String>) -> Self {
        Self(msg.into())
    }
}

/// Failure to decode a binary image.
#[derive(Debug, Error)]
pub enum CodecError {
    #[error("bad magic: expected {expected:?}")]
    BadMagic { expected: [u8; 4] },
    #[error("unsupported format version {0}")]
    Version(u16),
    #[error("image truncated")]
    Truncated,
    #[error("trailing bytes after image")]
    Trailing,
    #[error("corrupt image: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
}
