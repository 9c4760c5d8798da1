use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A tensor could not be built with the requested extents.
    #[error("invalid tensor construction: {0}")]
    Construction(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Training-mode batch norm needs at least two values per channel.
    #[error("degenerate batch: {0}")]
    DegenerateBatch(String),

    /// An API was used out of order, e.g. backward with an inference cache.
    #[error("usage error: {0}")]
    Usage(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Load(#[from] LoadError),

    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

/// Failures when decoding a tensor container.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum LoadError {
    #[error("bad magic bytes {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported container version {0}")]
    Version(u8),
    #[error("unknown dtype code {0}")]
    Dtype(u8),
    #[error("unsupported rank {0}, expected 4")]
    Rank(u8),
    #[error("bad length: expected {expected} bytes, found {found}")]
    Length { expected: usize, found: usize },
    #[error("checksum mismatch: stored {stored:#018x}, computed {computed:#018x}")]
    Checksum { stored: u64, computed: u64 },
    #[error("invalid extents {0:?}")]
    Extents([u32; 4]),
    #[error("stored dtype code {found}, caller expected {expected}")]
    WrongDtype { expected: u8, found: u8 },
}
