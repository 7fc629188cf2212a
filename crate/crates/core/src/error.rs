use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid neuron config: {0}")]
    InvalidConfig(String),

    #[error("firing threshold must be positive, got {0}")]
    NonPositiveThreshold(f64),

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("inconsistent topology: {0}")]
    InconsistentTopology(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("trace does not match network: {0}")]
    TraceMismatch(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite gradient in {0}")]
    NonFiniteGradient(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch}: {value}")]
    NonFiniteLoss { epoch: usize, batch: usize, value: f64 },

    #[error("truncated record: {0} bytes is not a multiple of 5")]
    TruncatedRecord(usize),

    #[error("coordinate out of range in record {index}: x={x}, y={y}")]
    CoordinateOutOfRange { index: usize, x: u8, y: u8 },

    #[error("timestamp {0} does not fit in 23 bits")]
    TimestampOverflow(u32),

    #[error("digit out of range: {0}")]
    DigitOutOfRange(u8),

    #[error("invalid task id: {0}")]
    InvalidTask(u8),

    #[error("missing directory: {}", .0.display())]
    MissingDirectory(PathBuf),

    #[error("unreadable file {}: {source}", path.display())]
    UnreadableFile {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("checksum mismatch for {}", .0.display())]
    ChecksumMismatch(PathBuf),

    #[error("network failure: {0}")]
    Network(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("unsupported checkpoint format version {found} (this build reads version {supported})")]
    CheckpointVersion { found: u32, supported: u32 },

    #[error("config error: {0}")]
    Config(String),

    #[error("empty result set")]
    EmptyRows,

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code for this error: 1 validation, 2 runtime/numeric, 3 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidConfig(_)
            | Error::NonPositiveThreshold(_)
            | Error::InconsistentTopology(_)
            | Error::DigitOutOfRange(_)
            | Error::InvalidTask(_)
            | Error::Config(_)
            | Error::CheckpointVersion { .. } => 1,
            Error::LengthMismatch { .. }
            | Error::DimensionMismatch(_)
            | Error::TraceMismatch(_)
            | Error::ShapeMismatch(_)
            | Error::NonFiniteGradient(_)
            | Error::NonFiniteLoss { .. }
            | Error::EmptyRows => 2,
            Error::TruncatedRecord(_)
            | Error::CoordinateOutOfRange { .. }
            | Error::TimestampOverflow(_)
            | Error::MissingDirectory(_)
            | Error::UnreadableFile { .. }
            | Error::ChecksumMismatch(_)
            | Error::Network(_)
            | Error::Checkpoint(_)
            | Error::Io(_) => 3,
        }
    }
}
