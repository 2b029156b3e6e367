use thiserror::Error;

/// Errors raised by model construction, estimation, coupling and Monte Carlo runs.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid value for `{field}`: {reason}")]
    InvalidParameter { field: String, reason: String },

    #[error("missing required key `{0}`")]
    MissingKey(String),

    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("skedasis function is not positive on the covariate support (at {point:?})")]
    SkedasisNotPositive { point: Vec<f64> },

    #[error("covariate point {point:?} lies outside the support")]
    OutsideSupport { point: Vec<f64> },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("t = {t} is below the tail branch; minimal admissible t is {min_t}")]
    BelowTailBranch { t: f64, min_t: f64 },

    #[error("level {level} lies in the body regime; must be at most {max_level}")]
    BodyRegime { level: f64, max_level: f64 },

    #[error("sample is empty")]
    EmptySample,

    #[error("top-k threshold requires 1 <= k < n (k = {k}, n = {n})")]
    InvalidTopK { k: usize, n: usize },

    #[error("no observations exceed the threshold {level}")]
    NoExceedances { level: f64 },

    #[error("no covariate within the kernel window; bandwidth must exceed {min_bandwidth}")]
    EmptyWindow { min_bandwidth: f64 },

    #[error("estimation failed: {0}")]
    EstimationFailure(String),

    #[error("supports of the two distributions are not aligned")]
    MisalignedSupports,

    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    #[error("no exceedance draws (E = 1) to evaluate")]
    InsufficientExceedances,

    #[error("precondition `{name}` violated: {value} < {minimum}")]
    Precondition {
        name: String,
        value: f64,
        minimum: f64,
    },

    #[error("need at least {needed} values, got {got}")]
    TooFewValues { needed: usize, got: usize },

    #[error("csv: {0}")]
    Csv(String),
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Csv(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(field: &str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        field: field.to_string(),
        reason: reason.into(),
    }
}
