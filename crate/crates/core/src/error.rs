use thiserror::Error;

/// Errors raised by the geometric and analytic routines of this crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected} real coordinates, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("scale {eps} outside the admissible range (0, {max}]")]
    ScaleRange { eps: f64, max: f64 },

    #[error("slice never reaches {target} before |lambda| = {bound} (direction leaves the admissible region)")]
    Bracket { target: f64, bound: f64 },

    #[error("trajectory left the band |r| < {width} at t = {time}")]
    BandExit {
        time: f64,
        width: f64,
        last: Vec<f64>,
    },

    #[error("nearest-point projection did not converge after {iterations} iterations (residual {residual:e})")]
    ProjectionFailed { iterations: usize, residual: f64 },

    #[error("gradient too small for curvature evaluation: |grad r| = {0}")]
    Singular(f64),

    #[error("delta condition violated: {0}")]
    DeltaCondition(String),

    #[error("empty region: {0}")]
    EmptyRegion(String),

    #[error("series accuracy: {0}")]
    Accuracy(String),

    #[error("diagnostic: {0}")]
    Diagnostic(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Process exit code: 2 for configuration problems, 3 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::DimensionMismatch { .. }
            | Error::InvalidInput(_)
            | Error::ScaleRange { .. }
            | Error::DeltaCondition(_)
            | Error::Io(_)
            | Error::Json(_)
            | Error::Csv(_) => 2,
            _ => 3,
        }
    }

    /// Short machine-readable reason code used in reports.
    pub fn code(&self) -> &'static str {
        match self {
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::InvalidInput(_) => "invalid_input",
            Error::ScaleRange { .. } => "scale_range",
            Error::Bracket { .. } => "bracket",
            Error::BandExit { .. } => "band_exit",
            Error::ProjectionFailed { .. } => "projection_failed",
            Error::Singular(_) => "singular",
            Error::DeltaCondition(_) => "delta_condition",
            Error::EmptyRegion(_) => "empty_region",
            Error::Accuracy(_) => "accuracy",
            Error::Diagnostic(_) => "diagnostic",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
