use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}` = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },

    #[error("singular input: {0}")]
    Singular(&'static str),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("PDE solver unstable at t = {time:.6}: {detail}")]
    Unstable { time: f64, detail: String },

    #[error("curve covers up to {available:.6}y but {requested:.6}y was requested")]
    CurveTooShort { requested: f64, available: f64 },

    #[error("calibration did not converge after {iterations} iterations (max residual {max_residual_bp:.4} bp)")]
    NotConverged {
        iterations: usize,
        max_residual_bp: f64,
    },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn param(name: &'static str, value: f64, reason: &'static str) -> Self {
        Error::InvalidParameter {
            name,
            value,
            reason,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
