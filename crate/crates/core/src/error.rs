use thiserror::Error;

/// Errors raised by the datapath models, the performance model and the toy runtime.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid 2-bit ternary code {0:#04b}")]
    InvalidCode(u8),
    #[error("invalid trit value {0}")]
    InvalidTrit(i64),
    #[error("packed byte {0} is out of range (must be < 243)")]
    InvalidPackedByte(u8),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("operand {value} does not fit in {width} bits")]
    Range { value: i64, width: u32 },
    #[error("precision mode mismatch: {0}")]
    ModeMismatch(String),
    #[error("k = {k} exceeds the number of candidates ({len})")]
    KTooLarge { k: usize, len: usize },
    #[error("softmax running sum is zero")]
    ZeroSum,
    #[error("infeasible schedule: {0}")]
    InfeasibleSchedule(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("malformed file: {0}")]
    Format(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
