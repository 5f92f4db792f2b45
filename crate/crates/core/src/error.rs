use thiserror::Error;

/// Errors raised by the estimation pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("domain error in {function}: argument {value} outside the admissible domain")]
    Domain { function: &'static str, value: f64 },

    #[error("degenerate segment at cell (i={i}, t={t}, r={r}): width {width:e} below {threshold:e}")]
    DegenerateSegment {
        i: usize,
        t: usize,
        r: usize,
        width: f64,
        threshold: f64,
    },

    #[error("model contract violation: {0}")]
    ContractViolation(String),

    #[error("rank deficiency: {0}")]
    RankDeficient(String),

    #[error("data error at line {line}: {message}")]
    Data { line: usize, message: String },

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::ContractViolation(msg.into())
    }

    /// Attaches a cell location to a degenerate-segment error raised deep in a path.
    pub(crate) fn at_cell(self, i: usize, t: usize, r: usize) -> Self {
        match self {
            Error::DegenerateSegment {
                width, threshold, ..
            } => Error::DegenerateSegment {
                i,
                t,
                r,
                width,
                threshold,
            },
            other => other,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
