use thiserror::Error;

#[derive(Debug, Error)]
pub enum HelidiffError {
    /// Invalid user configuration: unknown names, bad parameters, inconsistent settings.
    #[error("configuration error: {0}")]
    Config(String),

    /// A caller broke a precondition (dimension mismatch and the like).
    #[error("contract violation: {0}")]
    Contract(String),

    /// The requested diagnostic does not apply to this operator (odd dimension, singular matrix).
    #[error("not applicable: {0}")]
    NotApplicable(String),

    #[error("point {point:?} lies outside the operator domain: {reason}")]
    Domain { point: Vec<f64>, reason: String },

    /// The friction constant is undefined because the noise does not couple to the energy.
    #[error("undefined beta: denominator {denominator:e} below threshold")]
    UndefinedBeta { denominator: f64 },

    /// Too much mass was clipped by the positivity fix-up; the grid is too coarse for the run.
    #[error("resolution error: clipped mass {clipped:e} exceeds budget {budget:e}")]
    Resolution { clipped: f64, budget: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("toml parse error: {0}")]
    TomlDe(#[from] toml::de::Error),

    #[error("toml serialize error: {0}")]
    TomlSer(#[from] toml::ser::Error),
}

impl HelidiffError {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            HelidiffError::Config(_) | HelidiffError::TomlDe(_) | HelidiffError::TomlSer(_) => 2,
            HelidiffError::Contract(_) | HelidiffError::NotApplicable(_) => 2,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, HelidiffError>;
