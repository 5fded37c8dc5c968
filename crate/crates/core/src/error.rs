use thiserror::Error;

/// Every failure mode surfaced by the solver stack.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("geometry error: {0}")]
    Geometry(String),
    #[error("{what} did not converge after {iterations} iterations (residual {residual:.3e})")]
    Convergence {
        what: String,
        iterations: usize,
        residual: f64,
    },
    #[error("iterate lost positivity at node {node} (value {value:.3e})")]
    PositivityLoss { node: usize, value: f64 },
    #[error("singular linear system: {0}")]
    SingularSystem(String),
    #[error("not a supersolution at {} nodes (first {:?})", .0.len(), .0.first())]
    NotSupersolution(Vec<usize>),
    #[error("epsilon schedule exhausted after {stages} stages (last change {last_change:.3e})")]
    ScheduleExhausted { stages: usize, last_change: f64 },
    #[error("bracket violation of size {size:.3e} at node {node}")]
    BracketViolation { node: usize, size: f64 },
    #[error("no solution evidence: {0}")]
    NoSolutionEvidence(String),
    #[error("quadrature error: {0}")]
    Quadrature(String),
    #[error("local minimum probe failed on {} perturbations", .0.len())]
    ProbeFailure(Vec<usize>),
    #[error("bubble margin violation at t={t:.4}, eps={eps:.3e} (margin {margin:.3e})")]
    MarginViolation { t: f64, eps: f64, margin: f64 },
    #[error("sphere classification ambiguous at rho={rho:.3e} (inf {inf_value:.3e})")]
    ClassificationAmbiguous { rho: f64, inf_value: f64 },
    #[error("critical level {gamma0:.6e} fails the sandwich 0 < level < {threshold:.6e}")]
    StallAboveThreshold { gamma0: f64, threshold: f64 },
    #[error("annulus descent collapsed to zero (norm {norm:.3e})")]
    EscapeToZero { norm: f64 },
    #[error("solver succeeded at lambda={above:.6e} above a failure at lambda={below:.6e}")]
    InconsistentBracket { below: f64, above: f64 },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
