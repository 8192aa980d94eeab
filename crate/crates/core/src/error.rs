use thiserror::Error;

pub type Result<T, E = TwinError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum TwinError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: String, found: String },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// The rate targets cannot be met at any finite power.
    #[error("infeasible rate targets: {0}")]
    Infeasible(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl TwinError {
    pub fn shape(expected: impl ToString, found: impl ToString) -> Self {
        TwinError::ShapeMismatch {
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }

    /// Process exit code used by the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            TwinError::Infeasible(_) => 3,
            TwinError::Numerical(_) | TwinError::NonFinite(_) => 4,
            _ => 2,
        }
    }
}
