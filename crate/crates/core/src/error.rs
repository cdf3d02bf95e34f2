use thiserror::Error;

/// Errors raised by the plant, oracle, optimizer and certificate routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("matrix is not symmetric (asymmetry {asymmetry:.3e})")]
    NotSymmetric { asymmetry: f64 },
    #[error("eigen/singular value solver failed: {0}")]
    SolverError(String),
    #[error("gain is not stabilizing (spectral radius {spectral_radius:.6})")]
    NotStabilizing { spectral_radius: f64 },
    #[error("resolvent is singular at omega = {omega}")]
    SingularResolvent { omega: f64 },
    #[error("unknown builtin example `{0}`")]
    UnknownName(String),
    #[error("example3 requires an `alpha` parameter")]
    AlphaMissing,
    #[error("no finite upper bound found for the H-infinity norm")]
    NoUpperBound,
    #[error("empty generator list")]
    EmptyList,
    #[error("vector is not of unit norm (norm {norm})")]
    NotUnitVector { norm: f64 },
    #[error("invalid step schedule: {0}")]
    InvalidSchedule(String),
    #[error("initial gain is not stabilizing")]
    K0NotStabilizing,
    #[error("rho = {rho} must exceed the weak-convexity estimate {m_hat}")]
    RhoTooSmall { rho: f64, m_hat: f64 },
    #[error("run log is empty")]
    EmptyLog,
    #[error("gain must have exactly two entries for a 2-D scan (got {rows}x{cols})")]
    WrongGainShape { rows: usize, cols: usize },
    #[error("no feasible sample found in the sublevel set")]
    EmptySample,
    #[error("cost is within 1e-9 of the optimal value")]
    AtOptimum,
    #[error("Lyapunov variable is not positive definite")]
    PNotPD,
    #[error("gamma must be positive (got {0})")]
    GammaNonPositive(f64),
    #[error("operation requires full state feedback (C = I)")]
    NotStateFeedback,
}

pub type Result<T> = std::result::Result<T, Error>;
