use thiserror::Error;

use crate::matops::Matrix;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite entry in {0}")]
    NonFinite(String),

    #[error("{what} is not positive {kind} (min eigenvalue {min_eigenvalue:.3e})")]
    NotPositive {
        what: String,
        kind: &'static str,
        min_eigenvalue: f64,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("Sylvester operator is near-singular (condition number {condition:.3e})")]
    SingularOperator { condition: f64 },

    #[error("(A, B) is not stabilizable")]
    NotStabilizable,

    #[error("{what} did not converge after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("Newton Jacobian is singular (condition number {condition:.3e})")]
    SingularJacobian { condition: f64 },

    #[error("dynamics are not stable (spectral radius {spectral_radius:.6})")]
    UnstableDynamics { spectral_radius: f64 },

    #[error("numerical breakdown in Kalman filter at t={t}: innovation covariance min eigenvalue {min_eigenvalue:.3e}")]
    NumericalBreakdown { t: usize, min_eigenvalue: f64 },

    #[error("sufficient statistic {what} is ill-conditioned (condition number {condition:.3e})")]
    SingularStats { what: &'static str, condition: f64 },

    #[error("log-likelihood decreased at iteration {iteration}: {previous} -> {current}")]
    MonotonicityViolation {
        iteration: usize,
        previous: f64,
        current: f64,
    },

    #[error("initial A shares an eigenvalue with -F^-1 (gap {gap:.3e})")]
    BadInitialization { gap: f64 },

    /// The pseudo-inverse path was taken; the estimate is one member of an
    /// affine family spanned by `null_space`.
    #[error("B R^-1 B^T is rank deficient (rank {rank}); estimate is not unique")]
    RankDeficient {
        rank: usize,
        estimate: Box<Matrix>,
        null_space: Box<Matrix>,
    },

    #[error("P is singular (condition number {condition:.3e})")]
    SingularP { condition: f64 },

    #[error("closed-loop sequence is inconsistent with a Q_T = Q, B = R = I regulator (replay residual {residual:.3e})")]
    InconsistentSequence { residual: f64 },

    #[error("dataset: {0}")]
    Dataset(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
