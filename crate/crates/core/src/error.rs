use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error: {0}")]
    Parse(String),

    /// A network or input violates a structural invariant.
    #[error("validation error: {0}")]
    Validation(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("singular system: {0}")]
    Singular(String),

    #[error(
        "solver did not converge: relative residual {residual:e} after {iterations} iterations"
    )]
    NonConvergence { residual: f64, iterations: usize },

    #[error("non-finite value in {layer} at index {index}")]
    NonFinite { layer: String, index: usize },

    #[error("sample {sample}: {source}")]
    Sample {
        sample: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Coarse error class used for process exit codes and machine-readable reports.
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Io { .. } | Error::Parse(_) | Error::Validation(_) => ErrorKind::Validation,
            Error::InvalidArgument(_) | Error::DimensionMismatch(_) => ErrorKind::Usage,
            Error::Singular(_) | Error::NonConvergence { .. } | Error::NonFinite { .. } => {
                ErrorKind::Numeric
            }
            Error::Sample { source, .. } => source.kind(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Validation,
    Numeric,
}

pub type Result<T> = std::result::Result<T, Error>;
