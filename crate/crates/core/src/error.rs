use alloc::string::String;

/// Errors produced by the codec core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("expected {expected} points, got {actual}")]
    PointCount { expected: usize, actual: usize },
    #[error("malformed data at byte {offset}: {reason}")]
    Format { offset: usize, reason: String },
    #[error("input truncated: {0}")]
    Truncated(String),
    #[error("unsupported format version {found} (expected {expected})")]
    Version { expected: u16, found: u16 },
    #[error("checksum mismatch: stored {stored:016x}, computed {computed:016x}")]
    Checksum { stored: u64, computed: u64 },
    #[error("model digest mismatch: bitstream expects {expected:016x}, model is {actual:016x}")]
    DigestMismatch { expected: u64, actual: u64 },
    #[error("tensor `{name}`: {reason}")]
    Tensor { name: String, reason: String },
    #[error("density of channel {channel} places too much mass outside any codable support")]
    DegenerateDensity { channel: usize },
    #[error("non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
}

pub type Result<T> = core::result::Result<T, Error>;
