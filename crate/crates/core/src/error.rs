use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("probability {value} at index {index} is outside [0, 1]")]
    InvalidProbability { index: usize, value: f64 },

    #[error("categorical row sums to {sum}, expected 1")]
    NotNormalized { sum: f64 },

    #[error("non-finite value {value} at index {index}")]
    NonFinite { index: usize, value: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("empty sample set")]
    EmptySamples,

    #[error("estimator needs at least {required} samples, got {got}")]
    TooFewSamples { required: usize, got: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Raised when an exact computation would exceed its size guard.
    #[error("{what}: size {size} exceeds the limit {limit}")]
    TooLarge {
        what: &'static str,
        size: u128,
        limit: u128,
    },

    #[error("kappa must be positive, got {0}")]
    NonPositiveKappa(f64),

    #[error("debias denominator must be positive, got {0}")]
    DegenerateDebias(f64),

    #[error("tail sampler failed: {0}")]
    TailSampler(String),

    #[error("evaluation budget exhausted: {used} of {budget} lookups used")]
    BudgetExhausted { used: u64, budget: u64 },

    #[error("score table line {line}: {message}")]
    TableParse { line: usize, message: String },

    #[error("score table: {0}")]
    Table(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for errors produced by size/resource guards rather than bad input.
    pub fn is_resource_guard(&self) -> bool {
        matches!(self, Error::TooLarge { .. } | Error::BudgetExhausted { .. })
    }

    /// True for input-validation failures.
    pub fn is_validation(&self) -> bool {
        !self.is_resource_guard() && !matches!(self, Error::Io(_))
    }
}
