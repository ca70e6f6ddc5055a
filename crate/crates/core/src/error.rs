use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("dispersive interaction requires a non-zero detuning")]
    ZeroDetuning,

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("invalid density matrix: {0}")]
    InvalidState(String),

    #[error("integration step {dt:e} s violates stability bound (dt * rate scale = {product:.3} > 0.1)")]
    UnstableStep { dt: f64, product: f64 },

    #[error("operator is not unitary (max |U U^dagger - 1| = {deviation:e})")]
    NotUnitary { deviation: f64 },

    #[error("per-atom damping factor {0} out of range (0, 1]")]
    FactorOutOfRange(f64),

    #[error("decay fit is degenerate: {0}")]
    FitDegenerate(String),

    #[error("gain diverges: lambda * protection fraction = {product} >= 1")]
    DivergentGain { product: f64 },

    #[error("dwell-time denominator is not positive ({value:e})")]
    NegativeDenominator { value: f64 },

    #[error("dwell times are undefined for kappa <= 0")]
    ZeroKappa,

    #[error("config error in `{field}`: {message}")]
    Config { field: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    /// Short machine-readable tag used in CLI error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::DimensionMismatch { .. } => "DimensionMismatch",
            Error::ZeroDetuning => "ZeroDetuning",
            Error::InvalidParameter { .. } => "InvalidParameter",
            Error::InvalidState(_) => "InvalidState",
            Error::UnstableStep { .. } => "UnstableStep",
            Error::NotUnitary { .. } => "NotUnitary",
            Error::FactorOutOfRange(_) => "FactorOutOfRange",
            Error::FitDegenerate(_) => "FitDegenerate",
            Error::DivergentGain { .. } => "DivergentGain",
            Error::NegativeDenominator { .. } => "NegativeDenominator",
            Error::ZeroKappa => "ZeroKappa",
            Error::Config { .. } => "ConfigError",
            Error::Io(_) => "IoError",
            Error::Json(_) => "JsonError",
        }
    }

    /// Process exit code: 2 for configuration and I/O problems, 3 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } | Error::InvalidParameter { .. } | Error::Io(_) | Error::Json(_) => 2,
            _ => 3,
        }
    }
}
