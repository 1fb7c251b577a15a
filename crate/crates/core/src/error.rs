use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid cable `{name}`: {reason}")]
    InvalidCable { name: String, reason: String },

    #[error("unknown cable `{0}`")]
    UnknownCable(String),

    #[error("characteristic impedance is undefined at DC for a cable without shunt conductance")]
    UndefinedAtDc,

    #[error("branch input impedance is zero at {frequency} Hz (singular shunt)")]
    SingularShunt { frequency: f64 },

    #[error("invalid topology: {0}")]
    InvalidTopology(String),

    #[error("distance {distance} m is outside the supported span ({min} m, {max} m]")]
    OutOfRange { distance: f64, min: f64, max: f64 },

    #[error("impulse response has no non-zero tap")]
    EmptyPaths,

    #[error("length {0} is not a power of two")]
    NotPowerOfTwo(usize),

    #[error("frequency grid mismatch: expected {expected} bins, got {got}")]
    GridMismatch { expected: usize, got: usize },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("degenerate data: {0}")]
    Degenerate(String),

    #[error("fit failed ({what}), best residual norm {residual:e}")]
    FitFailure { what: String, residual: f64 },

    #[error("phase step of {step:.3} rad between adjacent bins exceeds the unwrap margin; use more bins")]
    BinDensity { step: f64 },

    #[error("sampler exceeded its retry cap: {0}")]
    Pathological(String),

    #[error("model configuration: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
