use thiserror::Error;

use crate::qp::QpStatus;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A point lies outside a polyhedron by more than the active-set tolerance.
    #[error("point violates row {row} by {violation:e}")]
    InfeasiblePoint { row: usize, violation: f64 },

    #[error("nonconvex_qp: reduced Hessian has eigenvalue {min_eigenvalue:e}")]
    NonconvexQp { min_eigenvalue: f64 },

    #[error("QP solve ended with status {status:?} (kkt residual {kkt_residual:e})")]
    QpFailed { status: QpStatus, kkt_residual: f64 },

    #[error("dynamics Jacobian is rank deficient (rank {rank} < {rows})")]
    RankDeficient { rank: usize, rows: usize },

    #[error("regularity_violated: {0}")]
    RegularityViolated(String),

    #[error("reference point residual {residual:e} exceeds {limit:e}")]
    ReferenceNotConverged { residual: f64, limit: f64 },

    #[error("attitude singularity: |cos(theta2)| = {cos_pitch:e}")]
    GimbalLock { cos_pitch: f64 },

    #[error("Riccati recursion did not converge after {iterations} iterations")]
    RiccatiDiverged { iterations: usize },

    #[error("corrector failed at step {step}: {reason}")]
    Aborted { step: usize, reason: String },
}
