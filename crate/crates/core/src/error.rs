use thiserror::Error;

/// Errors raised by the solver pipeline.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("non-finite state at step {step}")]
    NonFiniteState { step: usize },

    #[error("non-finite {what} at step {step}, entry ({row}, {col})")]
    NonFiniteDerivative {
        what: &'static str,
        step: usize,
        row: usize,
        col: usize,
    },

    #[error("non-finite cost at step {step}")]
    NonFiniteCost { step: usize },

    #[error(
        "innovation covariance singular at step {step} (min eigenvalue {min_eig:e}); \
         add a measurement-noise floor"
    )]
    SingularInnovation { step: usize, min_eig: f64 },

    /// `H + λI` failed to factor; the caller should raise λ.
    #[error("control Hessian not positive-definite at step {step}; needs more regularization")]
    NeedsRegularization { step: usize },

    #[error("non-finite block {block} at step {step}")]
    NonFiniteBlock { block: &'static str, step: usize },

    #[error("state diverged at step {step} (norm {norm:e})")]
    Diverged { step: usize, norm: f64 },

    #[error("risk estimate overflow: sigma * cost is not finite; use a smaller sigma or rescale costs")]
    RiskOverflow,

    #[error("problem failed validation: {0:?}")]
    Validation(Vec<String>),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
