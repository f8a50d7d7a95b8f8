use thiserror::Error;

/// Errors reported by the library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix is not skew-symmetric: asymmetry {asymmetry:.3e} exceeds {tolerance:.1e}")]
    NotSkew { asymmetry: f64, tolerance: f64 },
    #[error("structure matrices are linearly dependent")]
    DependentMatrices,
    #[error("invalid metric: {0}")]
    InvalidSpec(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("vertical covector is zero")]
    ZeroVertical,
    #[error("unreachable endpoint: {0}")]
    Unreachable(String),
    #[error("endpoint lies at or beyond the cut time: {0}")]
    BeyondCut(String),
    #[error("degenerate Maxwell variation: {0}")]
    DegenerateVariation(String),
    #[error("shooting did not converge (residual {residual:.3e})")]
    ShootingFailed { residual: f64 },
    #[error("metric is not Hilbert-Schmidt normalized")]
    NotNormalized,
    #[error("quadrature did not converge: error estimate {estimate:.3e} above target {target:.3e}")]
    NonConvergence { estimate: f64, target: f64 },
    #[error("negative Jacobian {value:.3e} at theta = {theta}, r = {r}")]
    NegativeJacobian { value: f64, theta: f64, r: f64 },
    #[error("inconsistent verdicts: {0}")]
    Inconsistency(String),
    #[error("malformed input: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
