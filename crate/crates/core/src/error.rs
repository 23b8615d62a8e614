use thiserror::Error;

/// Failures surfaced by the solvers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("coefficient `{coefficient}` is not finite at {arguments}")]
    NonFiniteCoefficient {
        coefficient: &'static str,
        arguments: String,
    },

    #[error("{process} became non-finite at step {step}")]
    NonFiniteState { process: &'static str, step: usize },

    #[error("regression at step {step} is singular after ridge escalation to {ridge:e}")]
    SingularRegression { step: usize, ridge: f64 },

    #[error("Picard iteration did not converge: residual {residual:e} after {iterations} sweeps")]
    PicardNonConvergence { iterations: usize, residual: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
