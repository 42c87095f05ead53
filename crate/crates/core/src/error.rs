use thiserror::Error;

/// Errors raised by the numerical core, the models and the benchmark layer.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("matrix is not positive definite (largest jitter tried: {jitter:e})")]
    NotPositiveDefinite { jitter: f64 },

    #[error("triangular matrix is singular at diagonal index {index}")]
    SingularTriangular { index: usize },

    #[error("matrix is not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("variance must be positive, got {0}")]
    NonPositiveVariance(f64),

    #[error("variance must be non-negative, got {0}")]
    NegativeVariance(f64),

    #[error("gradient contains non-finite entries")]
    NonFiniteGradient,

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("nominal mapping is only known at training points; no value for {0:?}")]
    MappingUnavailable(Vec<f64>),

    #[error("missing nominal mapped values: {0}")]
    MissingNominalValues(String),

    #[error("non-finite ELBO at iteration {iteration}")]
    NonFiniteElbo { iteration: usize },

    #[error("point {point:?} lies outside the bounds")]
    OutOfBounds { point: Vec<f64> },

    #[error("problem `{0}` has no closed-form evaluator for this fidelity; load it from a dataset")]
    DatasetBacked(String),

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("output variance is zero")]
    ZeroVariance,

    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("non-finite value in {0}")]
    NonFiniteValue(String),

    #[error("nominal table has no row for HF index {0}")]
    MissingNominalRow(usize),

    #[error("unknown problem `{0}`")]
    UnknownProblem(String),

    #[error("io error: {0}")]
    Io(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::SchemaMismatch(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
