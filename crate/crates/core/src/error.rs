use nalgebra::DVector;
use thiserror::Error;

pub type Result<T, E = GvsError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum GvsError {
    #[error("log branch singularity")]
    LogBranchSingularity,

    #[error("nonpositive interval")]
    NonpositiveInterval,

    #[error("dexp out of domain")]
    DexpOutOfDomain,

    #[error("abscissa out of range: {0}")]
    AbscissaOutOfRange(f64),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("unknown link '{0}'")]
    UnknownLink(String),

    #[error("duplicate link name '{0}'")]
    DuplicateLink(String),

    #[error("non-finite generalized coordinates")]
    NonFiniteState,

    #[error("degenerate cable path")]
    DegenerateCablePath,

    #[error("coincident centers")]
    CoincidentCenters,

    #[error("custom force produced NaN")]
    CustomForceNaN,

    #[error("singular mass matrix")]
    SingularMassMatrix,

    #[error("redundant constraints")]
    RedundantConstraints,

    #[error("no convergence after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence {
        iterations: usize,
        residual: f64,
        best: DVector<f64>,
    },

    #[error("stiff system, integration stalled at t = {t}")]
    IntegrationStalled { t: f64 },

    #[error("non-finite state at t = {t}")]
    NonFiniteTrajectory { t: f64, last_q: DVector<f64>, last_qd: DVector<f64> },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
}
