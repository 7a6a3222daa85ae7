use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },

    #[error("unknown identifier `{name}` at byte {offset}")]
    UnknownIdentifier { offset: usize, name: String },

    #[error("invalid transition matrix: {0}")]
    InvalidTransition(String),

    #[error("transition matrix is not irreducible; no unique stationary law")]
    Reducible,

    #[error("invalid model: {0}")]
    InvalidModel(String),

    /// `regime` is 1-based, `time` is the index k of Y_k being generated.
    #[error("regression for regime {regime} produced a non-finite value at time {time}")]
    NonFinite { regime: usize, time: usize },

    #[error("growth bounds missing: supply rho_i (and b_i) for every regime to check stability")]
    MissingGrowthBounds,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// 1-based labels of regimes with no observations.
    #[error("regime(s) never visited: {0:?}")]
    EmptyRegime(Vec<usize>),

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("invalid series: {0}")]
    InvalidSeries(String),

    #[error("non-finite curve value for regime {regime} at grid index {index}")]
    NonFiniteCurve { regime: usize, index: usize },

    #[error("unknown preset `{0}`")]
    UnknownPreset(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Coarse error classes used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Schema,
    Io,
    Numerical,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Syntax { .. }
            | Error::UnknownIdentifier { .. }
            | Error::UnknownPreset(_)
            | Error::Config(_)
            | Error::Json(_)
            | Error::InvalidModel(_)
            | Error::InvalidTransition(_)
            | Error::MissingGrowthBounds
            | Error::InvalidArgument(_) => ErrorClass::Schema,
            Error::Io(_) | Error::Csv(_) | Error::InvalidSeries(_) => ErrorClass::Io,
            Error::Reducible
            | Error::NonFinite { .. }
            | Error::EmptyRegime(_)
            | Error::LengthMismatch(..)
            | Error::NonFiniteCurve { .. } => ErrorClass::Numerical,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Error::Syntax { .. } => "syntax",
            Error::UnknownIdentifier { .. } => "unknown_identifier",
            Error::InvalidTransition(_) => "invalid_transition",
            Error::Reducible => "reducible_chain",
            Error::InvalidModel(_) => "invalid_model",
            Error::NonFinite { .. } => "non_finite",
            Error::MissingGrowthBounds => "missing_growth_bounds",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::EmptyRegime(_) => "empty_regime",
            Error::LengthMismatch(..) => "length_mismatch",
            Error::InvalidSeries(_) => "invalid_series",
            Error::NonFiniteCurve { .. } => "non_finite_curve",
            Error::UnknownPreset(_) => "unknown_preset",
            Error::Config(_) => "config",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
        }
    }
}
