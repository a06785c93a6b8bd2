use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {path} at {location}: {message}")]
    Parse {
        path: PathBuf,
        location: String,
        message: String,
    },

    #[error("non-finite coordinate in point cloud (index {index})")]
    NonFinite { index: usize },

    #[error("empty point cloud")]
    EmptyCloud,

    #[error("unknown {kind} name: {name}")]
    UnknownName { kind: &'static str, name: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch in {op}: {details}")]
    ShapeMismatch { op: &'static str, details: String },

    #[error("tape already consumed by backward")]
    TapeConsumed,

    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("bitstream error: {0}")]
    Bitstream(String),

    #[error("model hash mismatch: bitstream was produced by a different checkpoint")]
    ModelHashMismatch,

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error("non-finite loss at step {step}: D={distortion}, R={rate}")]
    NonFiniteLoss {
        step: usize,
        distortion: f64,
        rate: f64,
    },

    #[error("point outside octree root bounds: ({0}, {1}, {2})")]
    OutOfBounds(f64, f64, f64),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(
        path: impl Into<PathBuf>,
        location: impl Into<String>,
        message: impl Into<String>,
    ) -> Self {
        Error::Parse {
            path: path.into(),
            location: location.into(),
            message: message.into(),
        }
    }

    /// Process exit code for the CLI. Each failure class gets a distinct code
    /// so scripts can tell them apart.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } => 2,
            Error::Parse { .. } => 3,
            Error::NonFinite { .. } | Error::EmptyCloud => 4,
            Error::UnknownName { .. } | Error::InvalidArgument(_) => 5,
            Error::ShapeMismatch { .. } | Error::TapeConsumed | Error::NonScalarLoss(_) => 6,
            Error::Bitstream(_) => 7,
            Error::ModelHashMismatch => 8,
            Error::Checkpoint(_) => 9,
            Error::NonFiniteLoss { .. } => 10,
            Error::OutOfBounds(..) => 11,
        }
    }
}
