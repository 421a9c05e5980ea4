use thiserror::Error;

use crate::mdp::ValidationReport;

/// Errors raised by the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid MDP:\n{0}")]
    InvalidMdp(ValidationReport),

    #[error("invalid policy: {0}")]
    InvalidPolicy(String),

    #[error("policy entry ({state},{action}) would become {value}, outside (0,1)")]
    StepTooLarge { state: usize, action: usize, value: f64 },

    #[error("policy is not strictly positive at ({state},{action}): {value}")]
    NotInterior { state: usize, action: usize, value: f64 },

    #[error("initial distribution has no mass on state {0}")]
    NotFullSupport(usize),

    #[error("singular system in {block} (pivot {pivot:e})")]
    Singular { block: String, pivot: f64 },

    #[error("floor alpha = {alpha} is infeasible for dimension {dim}")]
    InfeasibleAlpha { alpha: f64, dim: usize },

    #[error("KL divergence undefined: reference has zero mass at index {0}")]
    KlUndefined(usize),

    #[error("KL projection did not terminate within {0} pivot rounds")]
    ProjectionStalled(usize),

    #[error("sampled classes disagree: {0}")]
    InconsistentClasses(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
