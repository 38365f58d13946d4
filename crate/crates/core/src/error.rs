use thiserror::Error;

/// Errors raised anywhere in the geometry → eigenpair → objective pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid knot vector: {0}")]
    InvalidKnots(String),

    #[error("invalid spline net: {0}")]
    InvalidNet(String),

    #[error("non-positive Jacobian determinant {det:.3e} at reference point ({xi:.6}, {eta:.6})")]
    SingularJacobian { xi: f64, eta: f64, det: f64 },

    #[error("mass matrix is not positive definite")]
    NotPositiveDefinite,

    #[error(
        "sensitivity unreliable near crossing: eigenvalue #{index} has relative gap {gap:.3e} to a neighbour (tolerance {tol:.1e})"
    )]
    NearCrossing { index: usize, gap: f64, tol: f64 },

    #[error("bordered eigenpair-derivative system is singular")]
    SingularSystem,

    #[error("ambiguous mode match: best |phi| = {best:.4} below floor {floor}; candidate |phi| = {candidates:?}")]
    AmbiguousMode {
        best: f64,
        floor: f64,
        candidates: Vec<f64>,
    },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("config error at {pointer}: {message}")]
    Config { pointer: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn config(pointer: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            pointer: pointer.into(),
            message: message.into(),
        }
    }

    /// True for errors caused by the input description rather than the numerics.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config { .. } | Error::InvalidKnots(_) | Error::InvalidNet(_) | Error::Unsupported(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
