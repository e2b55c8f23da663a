use thiserror::Error;

/// Errors raised by the simulator, estimators and harness.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid zone layout: {0}")]
    InvalidLayout(String),

    #[error("angular spacing {spacing} rad does not divide 2π (2π/φ = {ratio})")]
    NonIntegralSpacing { spacing: f64, ratio: f64 },

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("invalid model parameter: {0}")]
    InvalidModel(String),

    #[error("distance {distance} m is below the reference distance {reference} m")]
    TooClose { distance: f64, reference: f64 },

    #[error("duplicate sample: point {point} with source {source_id}")]
    DuplicateSample { point: usize, source_id: u32 },

    #[error("covariance factorization failed after jitter escalation (last jitter {jitter:e})")]
    FactorizationFailure { jitter: f64 },

    #[error("insufficient sensor pairs: {found} < {required}")]
    InsufficientPairs { found: usize, required: usize },

    #[error("no binned correlation above {floor}: cannot fit {what}")]
    NoPositiveCorrelation { what: &'static str, floor: f64 },

    #[error("degenerate residuals: {0}")]
    DegenerateResiduals(String),

    #[error("kriging system is singular after jitter escalation")]
    SingularSystem,

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("no prediction for {0}")]
    MissingPrediction(String),

    #[error("bad sensor geometry: {0}")]
    BadGeometry(String),

    #[error("height must be non-negative, got {0} m")]
    NegativeHeight(f64),

    #[error("invalid record: {0}")]
    InvalidRecord(String),

    #[error("replay mismatch: {0}")]
    ReplayMismatch(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("I/O error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}
