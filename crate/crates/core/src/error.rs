use std::path::PathBuf;

/// Errors raised anywhere in the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("bad magic bytes in {path}: expected {expected:?}, found {found:?}")]
    BadMagic {
        path: PathBuf,
        expected: [u8; 4],
        found: Vec<u8>,
    },

    #[error("non-finite value at row {row}, column {column}")]
    NonFinite { row: usize, column: usize },

    #[error("invalid label: {0}")]
    InvalidLabel(String),

    #[error("unknown factor {0:?}")]
    UnknownFactor(String),

    #[error("missing class: {0}")]
    MissingClass(String),

    #[error("sparsity level k={k} out of range 1..={dim}")]
    KOutOfRange { k: usize, dim: usize },

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("{what} carries no information (all importance entries are zero)")]
    NoInformation { what: String },

    #[error("malformed file {path}: {reason}")]
    Malformed { path: PathBuf, reason: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn malformed(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Malformed {
            path: path.into(),
            reason: reason.into(),
        }
    }

    /// Short machine-readable tag for the error variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidConfig(_) => "invalid_config",
            Error::DimensionMismatch(_) => "dimension_mismatch",
            Error::BadMagic { .. } => "bad_magic",
            Error::NonFinite { .. } => "non_finite",
            Error::InvalidLabel(_) => "invalid_label",
            Error::UnknownFactor(_) => "unknown_factor",
            Error::MissingClass(_) => "missing_class",
            Error::KOutOfRange { .. } => "k_out_of_range",
            Error::NonFiniteLoss { .. } => "non_finite_loss",
            Error::NoInformation { .. } => "no_information",
            Error::Malformed { .. } => "malformed",
            Error::Io { .. } => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
