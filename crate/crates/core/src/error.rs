use thiserror::Error;

/// Failure modes shared by every numeric kernel in the crate.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// An argument lies outside the domain of the requested function.
    #[error("domain error: {0}")]
    Domain(String),

    /// The requested quantity is infinite for these parameters.
    #[error("divergent: {0}")]
    Divergent(String),

    /// An argument is valid in principle but outside the range an inverse is defined on.
    #[error("out of range: {0}")]
    Range(String),

    /// An iterative solver did not reach its tolerance.
    #[error("no convergence: {0}")]
    Convergence(String),

    /// Invalid model or sampler configuration.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// A combinatorial enumeration would exceed its configured cap.
    #[error("enumeration of {count} configurations exceeds the cap of {cap}")]
    Combinatorial { count: u64, cap: u64 },

    /// An objective has no finite lower bound on the evaluation domain.
    #[error("objective unbounded below: {0}")]
    Unbounded(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}
