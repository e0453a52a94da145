use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value violates its constraint.
    #[error("invalid value for `{field}`: {reason}")]
    InvalidConfig { field: String, reason: String },

    /// Parse failure in a config file, with the 1-based line number.
    #[error("config line {line}: {reason}")]
    ConfigSyntax { line: usize, reason: String },

    #[error("integrator blew up at step {step}: state {state:?} is not finite (dt too large?)")]
    BlowUp { step: usize, state: Vec<f64> },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("lattice mismatch between density fields")]
    LatticeMismatch,

    #[error("eigensolver did not converge (max residual {max_residual:e})")]
    Eigensolver { max_residual: f64 },

    /// The perturbation bound has no content for this input.
    #[error("bound is vacuous: projection error {eps} >= 1")]
    VacuousBound { eps: f64 },

    #[error("requested {requested} items but only {available} available")]
    OutOfRange { requested: usize, available: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// Process exit code for the CLI: 2 for usage and config errors, 3 for
    /// numerical failures and everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidConfig { .. } | Error::ConfigSyntax { .. } => 2,
            _ => 3,
        }
    }
}
