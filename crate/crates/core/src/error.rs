use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A parameter set violates its invariants (non-finite value, bad range).
    #[error("configuration error: {0}")]
    Config(String),

    /// Observed data cannot be used (non-finite return, non-positive spot vol, empty series).
    #[error("data error: {0}")]
    Data(String),

    /// A function was evaluated outside its mathematical domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// The requested window needs an anchor the detector no longer retains.
    #[error("window [{k}, {l}] out of range: retained anchors {oldest}..={newest}")]
    WindowOutOfRange {
        k: u64,
        l: u64,
        oldest: u64,
        newest: u64,
    },

    #[error("parse error at {file}:{line}: {msg}")]
    Parse {
        file: String,
        line: u64,
        msg: String,
    },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    /// Short machine-readable tag, used by the CLI's one-line error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::Data(_) => "data",
            Error::Domain(_) => "domain",
            Error::WindowOutOfRange { .. } => "window",
            Error::Parse { .. } => "parse",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
        }
    }
}

/// Rejects NaN and infinities with a config error naming the field.
pub(crate) fn ensure_finite(name: &str, value: f64) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::config(format!("{name} must be finite, got {value}")))
    }
}
