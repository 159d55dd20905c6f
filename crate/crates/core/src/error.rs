use thiserror::Error;

use crate::qp::QpSolution;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("operation requires a stereographic chart, got {0}")]
    InvalidChart(String),

    #[error("point is within {distance:.3e} of the excluded pole of the {chart} chart")]
    NearPole { chart: String, distance: f64 },

    #[error("chart transition is singular at |y| = {norm:.3e}")]
    TransitionSingularity { norm: f64 },

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: String,
        expected: usize,
        got: usize,
    },

    #[error("task map of `{task}` is not a submersion (smallest singular value {sigma_min:.3e})")]
    SubmersionViolation { task: String, sigma_min: f64 },

    #[error("QP Hessian is not positive semidefinite (eigenvalue {eigenvalue:.3e})")]
    NotConvex { eigenvalue: f64 },

    #[error("QP objective is unbounded below")]
    Unbounded,

    #[error("active-set solver stalled after {iterations} working-set changes")]
    Stall {
        iterations: usize,
        best: Box<QpSolution>,
    },

    #[error("non-finite acceleration at t = {t}")]
    NonFinite { t: f64 },

    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),

    #[error("invalid configuration at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("invalid kinematic chain: {0}")]
    Chain(String),

    #[error("{0}")]
    Scenario(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dims(context: impl Into<String>, expected: usize, got: usize) -> Self {
        Error::DimensionMismatch {
            context: context.into(),
            expected,
            got,
        }
    }
}
