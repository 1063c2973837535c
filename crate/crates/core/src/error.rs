//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Caller passed a parameter outside its documented domain.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Two fields that must share a grid do not.
    #[error("incompatible grids: {0}")]
    IncompatibleGrids(String),

    /// A tolerance could not be met at the requested resolution.
    #[error("resolution too low: {0}")]
    ResolutionError(String),

    /// An iteration diverged or produced non-finite values.
    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    /// A right-hand side violates the solvability (orthogonality) condition.
    #[error("solvability violated: {0}")]
    SolvabilityViolation(String),

    /// Parameters lie outside the asymptotic regime a formula is valid in.
    #[error("outside valid regime: {0}")]
    InvalidRegime(String),

    /// Modulation parameter extraction failed to converge.
    #[error("extraction failed: {0}")]
    ExtractionFailed(String),

    /// A profile or auxiliary object could not be constructed.
    #[error("construction failed: {0}")]
    ConstructionFailed(String),

    /// The grid cannot resolve the requested scales.
    #[error("grid too coarse: {0}")]
    GridTooCoarse(String),

    /// Not enough samples to perform a fit or a statistic.
    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}
