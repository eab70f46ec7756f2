use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot normalize a zero vector")]
    ZeroVector,
    #[error("dimension d = {d} is smaller than the token count n = {n}")]
    DimensionTooSmall { n: usize, d: usize },
    #[error("overlap {gamma} outside the admissible interval ({lower}, 1)")]
    OverlapOutOfRange { gamma: f64, lower: f64 },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("the value mean is non-zero; fluctuation kernels need a centered law")]
    NonCenteredLaw,
    #[error("closed-form kernel needs sigma_v^2 = 1/d = {expected}, got {got}")]
    WrongScaling { got: f64, expected: f64 },
    #[error("alpha is only closed-form for centered Gaussian value laws; supply a sigma^2 estimate")]
    NeedsSigmaEstimate,
    #[error("trajectory time {t} exceeds the reference horizon {horizon}")]
    TimeMismatch { t: f64, horizon: f64 },
    #[error("Monte-Carlo error exceeds the measured gap at every step size")]
    InsufficientTrials,
    #[error("RK4 step-refinement check failed: discrepancy {discrepancy:e} > {tolerance:e}")]
    OdeRefinement { discrepancy: f64, tolerance: f64 },
    #[error("non-finite value encountered: {0}")]
    NonFinite(&'static str),
    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },
    #[error("recorded library version {recorded} differs from {current}")]
    VersionMismatch { recorded: String, current: String },
    #[error("replay produced different output: {0}")]
    ReplayMismatch(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }

    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    /// Process exit status used by the `attnflow` binary.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } | Error::InvalidParameter { .. } | Error::Shape(_) => 2,
            Error::DimensionTooSmall { .. } | Error::OverlapOutOfRange { .. } => 2,
            Error::NonCenteredLaw | Error::WrongScaling { .. } | Error::NeedsSigmaEstimate => 2,
            Error::VersionMismatch { .. } | Error::ReplayMismatch(_) => 4,
            Error::Io(_) | Error::Json(_) | Error::Csv(_) => 1,
            _ => 3,
        }
    }
}
