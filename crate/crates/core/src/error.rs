use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("index out of bounds: {0}")]
    Bounds(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("calibration contains no shots")]
    EmptyCalibration,

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("integration grid covers only {covered:.6} of the probability mass")]
    Coverage { covered: f64 },

    #[error("graph construction failed: {0}")]
    Construction(String),

    #[error("logical error rate {0} is saturated (>= 0.5)")]
    Saturation(f64),

    #[error("ratio undefined: {0}")]
    UndefinedRatio(String),

    #[error("refused: {0}")]
    Refusal(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("internal invariant violated: {0}")]
    Internal(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            msg: msg.into(),
        }
    }
}
