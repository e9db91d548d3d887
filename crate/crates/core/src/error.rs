use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("malformed vertex address: {0}")]
    MalformedAddress(String),

    #[error("event budget of {budget} exceeded before reaching the horizon; shrink the horizon or the radius")]
    EventBudgetExceeded { budget: u64 },

    #[error("backward recursion budget of {budget} entries exceeded")]
    RecursionBudgetExceeded { budget: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("too few replicas: {got} (at least {min} required)")]
    TooFewReplicas { got: usize, min: usize },

    #[error("undetermined fraction {fraction:.4} exceeds the allowed {limit:.4}")]
    TooManyUndetermined { fraction: f64, limit: f64 },

    #[error("degenerate curve: {0}")]
    DegenerateCurve(String),

    #[error("transport rule undecided within window radius in {fraction:.4} of replicas (limit {limit:.4})")]
    TransportUndecided { fraction: f64, limit: f64 },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
