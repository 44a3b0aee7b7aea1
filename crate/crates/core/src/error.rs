use thiserror::Error;

/// Errors raised anywhere in the toolkit.
///
/// The variants are grouped so that front ends can map them onto exit codes:
/// I/O, data validation, invalid arguments and numeric failures.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid sequence {sequence}: {message}")]
    InvalidSequence { sequence: usize, message: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("upper bound violated at t={t}: intensity {intensity} > bound {bound}")]
    BoundViolated { t: f64, intensity: f64, bound: f64 },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("model format error: {0}")]
    Format(String),
}

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// True for errors caused by bad input data rather than bad flags or numerics.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. } | Error::InvalidSequence { .. } | Error::Format(_)
        )
    }

    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::Numeric(_) | Error::BoundViolated { .. })
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
