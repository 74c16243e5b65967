use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// A model or run parameter lies outside its admissible range.
    #[error("parameter `{field}` out of range: {reason}")]
    ParameterRange { field: String, reason: String },

    /// The requested (ε, q) pair cannot satisfy the balance relation with q < 1.
    #[error("infeasible balance constants: {0}")]
    Infeasible(String),

    /// The thinning dominating rate was exceeded by a state-dependent rate.
    #[error("switching rate {rate} exceeds dominating rate {bound}")]
    DominatingRate { rate: f64, bound: f64 },

    #[error("non-finite state after t = {last_valid_time}")]
    NumericalBlowup { last_valid_time: f64 },

    #[error("insufficient sample: {0}")]
    InsufficientSample(String),

    #[error("estimation failed: {0}")]
    EstimationFailure(String),

    /// More paths were censored than the estimator tolerates.
    #[error("unreliable estimate: {0}")]
    Reliability(String),

    #[error("recurrence criterion not satisfied: {0}")]
    CriterionRefused(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("histogram shapes differ: {0}")]
    ShapeMismatch(String),
}

impl Error {
    pub(crate) fn range(field: &str, reason: impl Into<String>) -> Self {
        Error::ParameterRange {
            field: field.to_string(),
            reason: reason.into(),
        }
    }
}
