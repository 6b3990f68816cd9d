use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid specification: {0}")]
    InvalidSpec(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("infeasible constraint set: {0}")]
    Infeasible(String),

    #[error("propensity {value} is outside (0, 1); cannot divide")]
    DivisionGuard { value: f64 },

    #[error("nonpositive variance {value}")]
    NonPositiveVariance { value: f64 },

    #[error("estimation failed: condition number {condition:.3e} ({context})")]
    EstimationFailure { condition: f64, context: String },

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("arm z={arm} has no observations")]
    EmptyArm { arm: u8 },

    #[error("arm z={arm} has only {count} observations (need at least {needed})")]
    InsufficientData { arm: u8, count: usize, needed: usize },

    #[error("values are not a member of the feasible set: {0}")]
    NotInFamily(String),

    #[error("batch {batch}, fold {fold}: {source}")]
    Stage {
        batch: usize,
        fold: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("too many failed replications: {failed} of {total}")]
    TooManyFailures { failed: usize, total: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn at_stage(self, batch: usize, fold: usize) -> Self {
        Error::Stage {
            batch,
            fold,
            source: Box::new(self),
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidSpec(_)
            | Error::Config(_)
            | Error::DimensionMismatch { .. }
            | Error::Io(_)
            | Error::Json(_)
            | Error::Csv(_) => 2,
            Error::Stage { source, .. } => source.exit_code(),
            _ => 3,
        }
    }
}
