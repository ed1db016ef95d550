use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("pattern exceeds domain: N={n} > N_d={n_d}")]
    PatternExceedsDomain { n: usize, n_d: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("singular jacobian: {0}")]
    SingularJacobian(String),
    #[error("singular bordered system: {0}")]
    SingularBorderedSystem(String),
    #[error("newton did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("corrector stalled at step size {h:e}")]
    CorrectorStalled { h: f64 },
    #[error("fold refinement failed: {0}")]
    RefinementFailed(String),
    #[error("factorization failure: {0}")]
    FactorizationFailure(String),
    #[error("ambiguous crossing: inertia difference {inertia} vs tracked {tracked}")]
    AmbiguousCrossing { inertia: usize, tracked: usize },
    #[error("wrong nullity: expected 2, found {0}")]
    WrongNullity(usize),
    #[error("step size underflow at t={t}")]
    StepUnderflow { t: f64 },
    #[error("missed event between branch points {0} and {1}")]
    MissedEvent(usize, usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// True for errors that come from numerics rather than bad input.
    pub fn is_numerical(&self) -> bool {
        !matches!(
            self,
            Error::InvalidGrid(_)
                | Error::PatternExceedsDomain { .. }
                | Error::InvalidArgument(_)
                | Error::Io(_)
                | Error::Json(_)
                | Error::Csv(_)
        )
    }
}
