use thiserror::Error;

/// Failure modes shared by all modules.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// An argument is outside the domain of the requested operation.
    #[error("domain error: {0}")]
    Domain(String),
    /// The exact computation would exceed its work cap.
    #[error("over budget: {0}")]
    OverBudget(String),
    /// No parameter value within the search cap satisfies the constraints.
    #[error("infeasible: {0}")]
    Infeasible(String),
    /// A least-squares fit has too few or collinear points.
    #[error("degenerate fit: {0}")]
    DegenerateFit(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
