use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("mode cutoff {m} too large for grid of {n_grid} points (need n_grid >= 2m + 2)")]
    CutoffTooLarge { m: usize, n_grid: usize },
    #[error("grid size {0} must be a power of two >= 2")]
    BadGridSize(usize),
    #[error("mode cutoff mismatch: {left} vs {right}")]
    CutoffMismatch { left: usize, right: usize },
    #[error("time must be {expected}, got {value}")]
    BadTime { value: f64, expected: &'static str },
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },
    #[error("invalid configuration at `{field}`: {reason}")]
    Config { field: String, reason: String },
    #[error("missing channel `{0}` in trajectory")]
    MissingChannel(&'static str),
    #[error("insufficient time resolution: dt = {dt} > (t - s)/10 = {limit}")]
    InsufficientResolution { dt: f64, limit: f64 },
    #[error("empty sample")]
    EmptySample,
    #[error("too few paths: {got} < {need}")]
    TooFewPaths { got: usize, need: usize },
    #[error("non-positive data at index {0}")]
    NonPositiveData(usize),
    #[error("germ evaluation failed on [{s}, {t}]: {reason}")]
    Germ { s: f64, t: f64, reason: String },
    #[error("io: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn param(name: &str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name: name.to_string(),
            reason: reason.into(),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
