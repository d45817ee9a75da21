use thiserror::Error;

use crate::model::ValidationReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid problem:\n{0}")]
    Invalid(ValidationReport),

    #[error("malformed problem file: {0}")]
    Parse(String),

    #[error("window exceeds horizon (window {window}, horizon {horizon})")]
    WindowExceedsHorizon { window: f64, horizon: f64 },

    #[error("schedule exhausted: horizon {horizon} lies beyond the last impulse time {last}")]
    ScheduleExhausted { horizon: f64, last: f64 },

    #[error("step underflow: {steps} steps exceed the limit of {limit}")]
    StepUnderflow { steps: u64, limit: u64 },

    #[error("time {t} is outside the computed range [{start}, {horizon}]")]
    OutOfRange { t: f64, start: f64, horizon: f64 },

    #[error("{0}")]
    InvalidArgument(String),

    #[error("criterion requires a single delay term (got {0})")]
    RequiresSingleDelay(usize),

    #[error("criterion requires a constant-lag delay")]
    RequiresConstantLag,

    #[error("structural mismatch: {0}")]
    StructuralMismatch(String),

    #[error("dominance violated: {0}")]
    DominanceViolated(String),

    #[error("s-grid too coarse: {0}")]
    GridTooCoarse(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("infeasible: {0}")]
    Infeasible(String),
}
