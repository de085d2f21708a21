//! Error type shared across the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// All failure modes surfaced by the library.
///
/// Variants carry enough context to act on the failure programmatically:
/// singular blocks report the offending eigenvalue, stability failures report
/// the spectral radius, rank failures identify the rollout.
#[derive(Debug, Error)]
pub enum Error {
    /// A matrix block that must be positive definite is singular or
    /// indefinite at the working tolerance.
    #[error("block `{what}` is not positive definite (min eigenvalue {min_eig:.3e})")]
    SingularBlock { what: &'static str, min_eig: f64 },

    /// A gain failed the mean-square stability test.
    #[error("closed loop is not mean-square stable (spectral radius {rho:.6})")]
    NotStable { rho: f64 },

    /// A feasibility requirement was violated (infeasible SDP, indefinite
    /// Lyapunov solution, ...).
    #[error("infeasible: {0}")]
    Infeasible(String),

    /// An iterative scheme exhausted its iteration budget.
    #[error("no convergence after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },

    /// A rollout's regressor matrix is rank deficient even after retries.
    #[error("rollout {index} is rank deficient (sigma_min/sigma_max {sigma_min:.3e})")]
    RankDeficientData { index: usize, sigma_min: f64 },

    /// User-supplied dimensions, parameters, or files are inconsistent.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// Too many runs of an experiment failed to produce usable output.
    #[error("experiment failed: {0}")]
    ExperimentFailed(String),

    /// A floating-point computation lost meaning (NaN state, singular
    /// vectorized operator, failed eigendecomposition, ...).
    #[error("numerical error: {0}")]
    NumericalError(String),

    /// The interior-point solver stalled before reaching the target accuracy.
    #[error("solver made no progress before reaching the requested accuracy")]
    NoProgress,

    /// Operands do not have compatible shapes.
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: String,
        got: String,
    },

    /// File system failure while importing or exporting artifacts.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}
