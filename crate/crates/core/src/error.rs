use thiserror::Error;

#[derive(Debug, Error)]
pub enum FinslerError {
    #[error("y = 0 is not in the slit tangent bundle (slit tangent bundle only)")]
    ZeroVector,

    #[error("derivative request out of bounds: {0}")]
    OrderOutOfBounds(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("axis {axis} is not periodic; periodic finite differences need a periodic axis")]
    NonPeriodicAxis { axis: usize },

    #[error("fundamental tensor is not positive definite (min eigenvalue {min_eigenvalue:e}) at x = {x:?}, y = {y:?}")]
    SingularMetric {
        min_eigenvalue: f64,
        x: Vec<f64>,
        y: Vec<f64>,
    },

    #[error("convexity lost at node {node:?} (min eigenvalue {min_eigenvalue:e})")]
    ConvexityLoss {
        node: [usize; 3],
        min_eigenvalue: f64,
    },

    #[error("unknown metric '{0}'")]
    UnknownMetric(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("unsupported tensor valence ({0}, {1})")]
    UnsupportedValence(usize, usize),

    #[error("dimension {0} is not supported here")]
    UnsupportedDimension(usize),

    #[error("base derivatives are unavailable for grid-mode structures")]
    GridModeBaseDerivative,

    #[error("metric family invalid at t = {t}: {reason}")]
    InvalidFamily { t: f64, reason: String },

    #[error("flow step failed after {retries} retries at t = {time}: {reason}")]
    StepFailed {
        retries: usize,
        time: f64,
        reason: String,
    },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl FinslerError {
    /// Numerical failures (as opposed to bad input) map to exit code 1 in the CLI.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            FinslerError::SingularMetric { .. }
                | FinslerError::ConvexityLoss { .. }
                | FinslerError::StepFailed { .. }
                | FinslerError::InvalidFamily { .. }
        )
    }
}

pub type Result<T, E = FinslerError> = std::result::Result<T, E>;
