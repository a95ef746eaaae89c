use thiserror::Error;

/// Errors raised by the estimation pipeline.
///
/// Variants that carry a `step` report the index of the observation being
/// processed when the failure happened.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum CgnsError {
    #[error("model definition error: {0}")]
    ModelDefinition(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("simulation blew up at step {step}")]
    BlowUp { step: usize },

    #[error("observation noise Gramian is singular at step {step}")]
    Observability { step: usize },

    #[error("non-finite or indefinite result at step {step}: {what}")]
    Divergence { step: usize, what: String },

    #[error("ill-conditioned matrix at step {step}: {what}")]
    Conditioning { step: usize, what: String },

    #[error("entry {j} is outside the live window [{oldest}, {newest}]")]
    OutOfWindow { j: usize, oldest: usize, newest: usize },

    #[error("spectral radius {rho} >= 1 for update tensor D^({j},{n})")]
    UnstableTensor { j: usize, n: usize, rho: f64 },

    #[error("parameters not identifiable; deficient columns {0:?}")]
    Identifiability(Vec<usize>),

    #[error("degenerate data: {0}")]
    Degenerate(String),
}

impl CgnsError {
    /// Re-tags a step-carrying error with the given step index.
    pub fn at_step(self, n: usize) -> Self {
        match self {
            CgnsError::BlowUp { .. } => CgnsError::BlowUp { step: n },
            CgnsError::Observability { .. } => CgnsError::Observability { step: n },
            CgnsError::Divergence { what, .. } => CgnsError::Divergence { step: n, what },
            CgnsError::Conditioning { what, .. } => CgnsError::Conditioning { step: n, what },
            other => other,
        }
    }

    /// True for failures of the numerics (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            CgnsError::BlowUp { .. }
                | CgnsError::Observability { .. }
                | CgnsError::Divergence { .. }
                | CgnsError::Conditioning { .. }
                | CgnsError::UnstableTensor { .. }
                | CgnsError::Identifiability(_)
                | CgnsError::Degenerate(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, CgnsError>;
