use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Input failed schema or invariant checks.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Argument outside the domain of an estimator formula.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("rerouting infeasible: stage {stage} lost {failed} of {dp_degree} replicas")]
    ReroutingInfeasible {
        stage: usize,
        failed: usize,
        dp_degree: usize,
    },

    /// Every layer placement for a pipeline exceeds the device memory cap.
    /// `min_peak_bytes` is the smallest per-placement worst-stage peak observed.
    #[error("no layer placement fits in memory: best peak {min_peak_bytes} B > limit {limit_bytes} B ({stages} stages, {layers} layers)")]
    MemoryInfeasible {
        stages: usize,
        layers: usize,
        min_peak_bytes: u64,
        limit_bytes: u64,
    },

    #[error("no feasible execution plan: {0}")]
    NoFeasiblePlan(String),

    #[error("dimension mismatch: {rows} surviving nodes but {slots} plan slots")]
    DimensionMismatch { rows: usize, slots: usize },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Infeasibility (as opposed to malformed input).
    pub fn is_infeasible(&self) -> bool {
        matches!(
            self,
            Error::ReroutingInfeasible { .. }
                | Error::MemoryInfeasible { .. }
                | Error::NoFeasiblePlan(_)
        )
    }
}
