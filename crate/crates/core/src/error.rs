use std::path::PathBuf;

/// Errors produced anywhere in the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected}, got {actual}")]
    Shape { expected: String, actual: String },

    #[error("invalid image: {0}")]
    InvalidImage(String),

    #[error("label {index} out of range for {classes} classes")]
    InvalidLabel { index: usize, classes: usize },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("invalid kernel: {0}")]
    InvalidKernel(String),

    #[error("invalid attack configuration: {0}")]
    InvalidAttack(String),

    #[error("target label {0} equals the origin label")]
    TargetEqualsOrigin(usize),

    #[error("non-finite gradient at epoch {epoch} (pixel {pixel})")]
    NonFiniteGradient { epoch: usize, pixel: usize },

    #[error("invalid detection configuration: {0}")]
    InvalidDetection(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("not enough images of digit {digit}: requested {requested}, available {available}")]
    InsufficientImages {
        digit: usize,
        requested: usize,
        available: usize,
    },

    #[error("IDX {path}: bad magic number 0x{found:08x}, expected 0x{expected:08x}")]
    IdxMagic {
        path: PathBuf,
        expected: u32,
        found: u32,
    },

    #[error("IDX {path}: truncated payload, expected {expected} bytes, found {found}")]
    IdxTruncated {
        path: PathBuf,
        expected: usize,
        found: usize,
    },

    #[error("IDX count mismatch: {images} images but {labels} labels")]
    IdxCountMismatch { images: usize, labels: usize },

    #[error("format error in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("benchmark record {id}: {reason}")]
    BenchmarkRecord { id: usize, reason: String },

    #[error("nothing to evaluate: {0}")]
    EmptyInput(&'static str),

    #[error("{what} {value} is below the required {floor}")]
    BelowFloor { what: &'static str, value: f64, floor: f64 },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(expected: impl ToString, actual: impl ToString) -> Self {
        Error::Shape {
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }

    /// True for failures of the filesystem rather than of the data or configuration.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. })
    }

    /// Broad failure class, used for process exit status.
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Io { .. }
            | Error::Format { .. }
            | Error::IdxMagic { .. }
            | Error::IdxTruncated { .. }
            | Error::IdxCountMismatch { .. }
            | Error::BenchmarkRecord { .. } => ErrorKind::Input,
            Error::BelowFloor { .. } => ErrorKind::Quality,
            _ => ErrorKind::Validation,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Bad configuration or arguments.
    Validation,
    /// Missing, unreadable or malformed input files.
    Input,
    /// A run completed but missed a configured quality floor.
    Quality,
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
