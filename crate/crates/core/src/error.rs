use thiserror::Error;

/// Errors shared across the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        got: Vec<usize>,
    },

    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    #[error("invalid timestep grid: {0}")]
    InvalidGrid(String),

    #[error("timestep {t} out of range for T={t_total}")]
    TimestepOutOfRange { t: usize, t_total: usize },

    #[error(
        "invalid timestep order: from={from}, to={to} ({direction} step requires {requirement})"
    )]
    TimestepOrder {
        from: usize,
        to: usize,
        direction: &'static str,
        requirement: &'static str,
    },

    #[error("unknown class id {id} (model has {count} classes)")]
    UnknownClass { id: usize, count: usize },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("training diverged at epoch {epoch}: loss is not finite")]
    TrainingDiverged { epoch: usize },

    #[error("pipeline plan error: {0}")]
    PlanError(String),

    #[error("attack aborted at iteration {iteration}: gradient is not finite")]
    NonFiniteGradient { iteration: usize },

    #[error("memory instrumentation unavailable: {0}")]
    Instrumentation(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
