//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("vector field evaluated to a non-finite value at ({x}, {y})")]
    NonFiniteEval { x: f64, y: f64 },

    #[error("state ({x}, {y}) is not finite")]
    NonFiniteState { x: f64, y: f64 },

    #[error("{what}: {detail}")]
    Domain { what: &'static str, detail: String },

    #[error("projection is undefined on the repelling branch W0 at ({x}, {y})")]
    ProjectionUndefined { x: f64, y: f64 },

    #[error("{value} is outside the range of {what}")]
    Range { what: &'static str, value: f64 },

    #[error("integration stalled at t = {t} (step-size underflow or step budget exhausted); last state ({x}, {y})")]
    Stiffness { t: f64, x: f64, y: f64 },

    #[error("trajectory became non-finite at t = {t}")]
    Divergence { t: f64 },

    #[error("no section crossing before t = {t_max}")]
    NoEvent { t_max: f64 },

    #[error("limit cycle search failed: {0}")]
    CycleNotFound(String),

    #[error("quadrature produced a non-finite value")]
    Quadrature,

    #[error("observable is not admissible: {0}")]
    ObservableRejected(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("transform not applicable: {0}")]
    Transform(String),

    #[error("malformed field file: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn domain(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Domain {
            what,
            detail: detail.into(),
        }
    }
}
