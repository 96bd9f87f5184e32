use thiserror::Error;

/// Errors raised by the distribution, model, and test routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("degenerate posterior: mixing proportion {0} leaves one component empty")]
    DegeneratePosterior(f64),

    #[error("degenerate weights: posterior weights sum to {0}")]
    DegenerateWeights(f64),

    #[error("line {line}: cannot parse {token:?} as a number")]
    Parse { line: usize, token: String },

    #[error("column {0:?} not found")]
    MissingColumn(String),

    #[error("no scores read from {0}")]
    EmptyInput(String),

    #[error("i/o error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub(crate) fn ensure_finite(name: &str, x: f64) -> Result<()> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{name} must be finite, got {x}")))
    }
}
