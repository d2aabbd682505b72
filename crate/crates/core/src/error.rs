use crate::dynamics::Trajectory;
use crate::numerics::Vector;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("no convergence after {iterations} iterations (residual {residual:.3e})")]
    Convergence { iterations: usize, residual: f64 },

    #[error("QP did not converge after {iterations} iterations (KKT residual {residual:.3e})")]
    QpNotConverged {
        iterations: usize,
        residual: f64,
        best: Vector,
    },

    #[error("infeasible constraints: {0}")]
    Infeasible(String),

    #[error("trajectory diverged at step {step}")]
    Divergence {
        step: usize,
        partial: Box<Trajectory>,
    },

    #[error("unsupported dictionary: {0}")]
    UnsupportedDictionary(String),

    #[error("no eigenfunction found (residual {residual:.3e} above bound {bound:.3e})")]
    NoEigenfunction { residual: f64, bound: f64 },

    #[error("missing history: need {needed} past samples, got {got}")]
    MissingHistory { needed: usize, got: usize },

    #[error("unknown input level {0:?}")]
    UnknownLevel(Vec<f64>),

    #[error("level {level:?}: {found} samples, need at least {needed}")]
    LevelInsufficientData {
        level: Vec<f64>,
        found: usize,
        needed: usize,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// Wraps an error with the name of the pipeline stage that produced it.
    pub fn in_stage(self, stage: impl Into<String>) -> Self {
        Error::Stage {
            stage: stage.into(),
            source: Box::new(self),
        }
    }
}
