//! Error type shared across the crate.

use crate::geometry::SubspaceBasis;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed caller input (bad tolerance, mismatched base points, ...).
    #[error("invalid input: {0}")]
    Input(String),

    /// A vector or matrix argument has the wrong size.
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    /// Non-finite entries where finite values are required.
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    /// The metric evaluation is not symmetric positive definite.
    #[error("metric is not symmetric positive definite at the evaluated point")]
    MetricNotSpd,

    /// Constraint rows are linearly dependent where independence is required.
    /// `dependent` holds the row indices that lie in the span of the others.
    #[error("constraint rows {dependent:?} are linearly dependent at the evaluation point")]
    DegenerateConstraints { dependent: Vec<usize> },

    /// The one-sided limit of the constraint subspace did not settle.
    /// Carries the last two bases of the refinement sequence.
    #[error(
        "one-sided constraint-subspace limit did not converge (principal-angle gap {gap:.3e})"
    )]
    LimitIndeterminate {
        previous: Box<SubspaceBasis>,
        last: Box<SubspaceBasis>,
        gap: f64,
    },

    /// Kinetic energy increased across a pure projection jump. This indicates
    /// a numerical inconsistency, never a physical outcome.
    #[error("kinetic energy increased by {increase:.3e} across a projection jump")]
    CarnotViolation { increase: f64 },

    /// Scenario file or CLI argument problems.
    #[error("scenario error: {0}")]
    Scenario(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn scenario(msg: impl Into<String>) -> Self {
        Error::Scenario(msg.into())
    }
}
