use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("modulus {0} is not a prime >= 2")]
    NotPrime(u32),

    #[error("value {value} out of range for GF({modulus})")]
    OutOfRange { value: u32, modulus: u32 },

    #[error("modulus mismatch: GF({left}) vs GF({right})")]
    ModulusMismatch { left: u32, right: u32 },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("zero has no multiplicative inverse")]
    ZeroInverse,

    #[error("no ({g},{r}) MDS code exists over GF({q}): {reason}")]
    CodeDoesNotExist { g: usize, r: usize, q: u32, reason: String },

    #[error("enumeration of {size} items exceeds the cap of {cap}")]
    EnumerationCap { size: f64, cap: f64 },

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("vertex {vertex} out of range for a graph on {n} vertices")]
    VertexOutOfRange { vertex: usize, n: usize },

    #[error("target discrepancy ({tau1:?}, {tau2:?}) not reached after {retries} draws")]
    InfeasibleDelta {
        tau1: Option<f64>,
        tau2: Option<f64>,
        retries: usize,
    },

    #[error("search space of {size:.3e} candidates exceeds the budget of {budget:.3e}")]
    BudgetExceeded { size: f64, budget: f64 },

    #[error("invalid discrepancy: {0}")]
    InvalidDelta(String),

    #[error("io error: {0}")]
    Io(String),

    #[error("serialization error: {0}")]
    Serde(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Serde(e.to_string())
    }
}
