//! Error type shared by every module of the crate.

use thiserror::Error;

/// Errors raised by risk computations.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum RiskError {
    /// A scalar argument is outside the domain of the function.
    #[error("{name} = {value} is outside the allowed range {range}")]
    Domain {
        name: &'static str,
        value: f64,
        range: &'static str,
    },

    /// A weighting measure cannot be built from the given parameters.
    #[error("invalid weighting measure: {0}")]
    InvalidMeasure(String),

    /// Scenario values or probabilities are malformed.
    #[error("invalid scenario distribution: {0}")]
    InvalidDistribution(String),

    /// Two inputs that must have matching shapes do not.
    #[error("shape mismatch in {context}: expected {expected}, found {found}")]
    Shape {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    /// An input that needs at least one element is empty.
    #[error("{0} is empty")]
    Empty(&'static str),

    /// A numerical integral or iteration did not converge.
    #[error("no convergence: {0}")]
    Divergence(String),

    /// A ratio against a non-negative utility was requested.
    #[error("utility of the reference position is {0}, expected a negative value")]
    NonNegativeUtility(f64),

    /// A linear functional is not defined on the range of a covariance matrix.
    #[error("vector is not in the range of the covariance matrix (residual {0:e})")]
    NotInRange(f64),

    /// Geometric preconditions failed (origin not interior, degenerate hull, ...).
    #[error("geometry: {0}")]
    Geometry(String),

    /// An optimization problem admits no acceptable solution.
    #[error("infeasible: {0}")]
    Infeasible(String),

    /// Any other invalid parameter.
    #[error("invalid parameter: {0}")]
    Parameter(String),
}

/// Result alias for this crate.
pub type Result<T> = std::result::Result<T, RiskError>;

pub(crate) fn check_unit_interval(name: &'static str, x: f64) -> Result<()> {
    if (0.0..=1.0).contains(&x) {
        Ok(())
    } else {
        Err(RiskError::Domain {
            name,
            value: x,
            range: "[0, 1]",
        })
    }
}
