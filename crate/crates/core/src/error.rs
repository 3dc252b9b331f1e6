use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid density matrix: {0}")]
    InvalidState(String),

    #[error("interval [{from}, {to}] is not covered by the Hamiltonian segments")]
    UncoveredInterval { from: f64, to: f64 },

    #[error("time ordering violated: {0}")]
    TimeOrdering(String),

    #[error("integration step unstable (drift {drift:.3e}); retry with a step of at most {suggested_dt:.3e}")]
    StepInstability { drift: f64, suggested_dt: f64 },

    #[error("exponential fit failed: {0}")]
    FitFailure(String),

    #[error("coupling operator is not an involution (max|O^2 - 1| = {0:.3e})")]
    NotInvolution(f64),

    #[error("quadrature resolution: {0}")]
    Resolution(String),

    #[error("full model dimension {dim} exceeds the configured cap {cap}")]
    DimensionCap { dim: usize, cap: usize },

    #[error("missing cross-bath correlator for channel pair ({0}, {1})")]
    MissingCrossCorrelator(usize, usize),

    #[error("configuration error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("malformed data: {0}")]
    Data(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Schema problems (exit code 2 in the CLI) versus everything else.
    pub fn is_schema_error(&self) -> bool {
        matches!(self, Error::Config { .. } | Error::Json(_))
    }
}
