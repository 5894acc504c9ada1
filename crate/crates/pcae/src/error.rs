use std::path::PathBuf;

use thiserror::Error;

/// Where in a text or binary file a parse error occurred.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Location {
    Line(usize),
    Byte(usize),
}

impl std::fmt::Display for Location {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Location::Line(l) => write!(f, "line {l}"),
            Location::Byte(b) => write!(f, "byte {b}"),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}, {location}: {reason}")]
    Parse { path: PathBuf, location: Location, reason: String },
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    /// A numerical check (gradient or round trip) did not pass.
    #[error("{0}")]
    Check(String),
    #[error(transparent)]
    Core(#[from] pcae_core::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Process exit status for this error: 1 usage, 2 data, 3 numeric, 4 format or digest.
    pub fn exit_code(&self) -> i32 {
        use pcae_core::Error as C;
        match self {
            Error::Usage(_) => 1,
            Error::Io { .. } | Error::Data(_) => 2,
            Error::Check(_) => 3,
            Error::Parse { .. } => 4,
            Error::Core(e) => match e {
                C::InvalidArgument(_) => 1,
                C::NonFinite(_) | C::NonFiniteLoss { .. } | C::DegenerateDensity { .. } => 3,
                C::Format { .. }
                | C::Truncated(_)
                | C::Version { .. }
                | C::Checksum { .. }
                | C::DigestMismatch { .. }
                | C::Tensor { .. } => 4,
                C::ShapeMismatch { .. } | C::EmptyCloud | C::PointCount { .. } => 2,
            },
        }
    }
}
