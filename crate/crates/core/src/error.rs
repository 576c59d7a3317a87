use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("solver diverged at step {step}: non-finite state component")]
    Diverged { step: usize },

    #[error("stability check failed: k*Omega_M = {k_omega:.6} >= 2 (pass --force to override)")]
    Unstable { k_omega: f64 },

    #[error("non-finite gradient encountered")]
    NonFiniteGradient,

    #[error("training collapsed at epoch {epoch}: {skipped}/{total} segments diverged")]
    TrainingCollapsed { epoch: usize, skipped: usize, total: usize },

    #[error("format error: {0}")]
    Format(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
