//! Josephy-Newton corrector.
//!
//! Each step linearizes the VI at `z_k` and solves the QP
//!
//! ```text
//! minimize   ½ δvᵀ ∇²_v L δv + ∇_v Lᵀ δv
//! subject to ∇_v g δv + g = 0,  M δv ≤ h − M v_k
//! ```
//!
//! The equality multiplier is the costate increment, since the gradient
//! already contains `Gᵀq_k`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::ocp::{Ocp, PrimalDual};
use crate::polyhedral::DEFAULT_TOL;
use crate::qp::{solve_qp, QpProblem, QpSettings};
use crate::sensitivity::{regularize_hessian, RhoPolicy};

/// `π(p, z) = ‖z − Π_E[z − F(p, z)]‖` with `E = V × ℝᵈ`.
///
/// The projection onto `V` splits into independent projections onto the
/// stage sets.
pub fn natural_residual(ocp: &Ocp, p: &DVector<f64>, z: &PrimalDual) -> Result<f64> {
    let f = ocp.eval_F(p, z)?;
    let j = ocp.num_primal();
    let mut sq = f.rows(j, ocp.num_costates()).norm_squared();
    for (range, poly) in ocp.constraint_blocks() {
        let v = z.v.rows_range(range.clone()).into_owned();
        let grad = f.rows_range(range);
        if poly.num_rows() == 0 {
            sq += grad.norm_squared();
        } else {
            let proj = poly.project(&(&v - grad))?;
            sq += (v - proj).norm_squared();
        }
    }
    Ok(sq.sqrt())
}

#[derive(Debug, Clone, Copy)]
pub struct CorrectorConfig {
    pub epsilon: f64,
    pub max_iter: usize,
    pub rho: RhoPolicy,
    pub qp: QpSettings,
}

impl Default for CorrectorConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-5,
            max_iter: 30,
            rho: RhoPolicy::Auto,
            qp: QpSettings::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorrectorStatus {
    Converged,
    MaxIter,
    QpFailure,
}

#[derive(Debug, Clone)]
pub struct CorrectorReport {
    pub z: PrimalDual,
    pub iterations: usize,
    /// Natural residual before each iteration and at exit.
    pub residuals: Vec<f64>,
    pub status: CorrectorStatus,
    /// Set when `status` is `QpFailure`.
    pub failure: Option<String>,
}

impl CorrectorReport {
    pub fn converged(&self) -> bool {
        self.status == CorrectorStatus::Converged
    }

    pub fn final_residual(&self) -> f64 {
        *self
            .residuals
            .last()
            .expect("at least the initial residual is recorded")
    }
}

/// One Josephy-Newton increment `(δv, δq)` from `z_k`.
pub fn jn_step(
    ocp: &Ocp,
    p: &DVector<f64>,
    z: &PrimalDual,
    rho: RhoPolicy,
    qp_settings: &QpSettings,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let kkt = ocp.eval_kkt_data(p, z)?;
    let stacked = ocp.stack_constraints();
    let d = ocp.num_costates();
    let b_eq = -&kkt.gval;
    let b_in = stacked.b() - stacked.gamma() * &z.v;

    let solve = |h: DMatrix<f64>, c: DVector<f64>| {
        let qp = QpProblem::new(h, c)
            .with_equalities(kkt.g.clone(), b_eq.clone())
            .with_inequalities(stacked.gamma().clone(), b_in.clone());
        solve_qp(&qp, qp_settings, None)
    };

    let mut min_eig = 0.0;
    for rho in rho.schedule(&kkt.r, &kkt.g) {
        let h = if rho > 0.0 {
            regularize_hessian(&kkt, rho)
        } else {
            kkt.r.clone()
        };
        match solve(h, kkt.grad_l.clone()) {
            Ok(sol) => {
                let sol = sol.into_optimal()?;
                // R̃δv = Rδv − ρGᵀg on the feasible set.
                let dq = sol.y_eq.rows(0, d) - &kkt.gval * rho;
                return Ok((sol.x, dq));
            }
            Err(Error::NonconvexQp { min_eigenvalue }) => min_eig = min_eigenvalue,
            Err(e) => return Err(e),
        }
    }

    // ρGᵀG leaves the Hessian on null(G) untouched. Penalize leaving the rows
    // active at v_k instead: ½ρ‖M_W δv − b_W‖² has zero value and gradient
    // whenever those rows stay active, so such solutions are unchanged.
    let active = stacked.active_set(&z.v, DEFAULT_TOL).unwrap_or_default();
    if !active.is_empty() {
        let m_w = linalg::select_rows(stacked.gamma(), &active);
        let b_w = DVector::from_iterator(active.len(), active.iter().map(|&i| b_in[i]));
        let mtm = m_w.transpose() * &m_w;
        let scale = 1.0 + linalg::mat_inf_norm(&kkt.r) / linalg::mat_inf_norm(&mtm).max(1.0);
        for factor in [1.0, 10.0, 100.0] {
            let rho = factor * scale;
            let h = &kkt.r + &mtm * rho;
            let c = &kkt.grad_l - m_w.transpose() * &b_w * rho;
            match solve(h, c) {
                Ok(sol) => {
                    let sol = sol.into_optimal()?;
                    return Ok((sol.x, sol.y_eq.rows(0, d).into_owned()));
                }
                Err(Error::NonconvexQp { min_eigenvalue }) => min_eig = min_eigenvalue,
                Err(e) => return Err(e),
            }
        }
    }

    // Last resort away from any solution: shift the whole Hessian. The shift
    // term vanishes with δv, so fixed points are unchanged.
    let mut mu = 2.0 * min_eig.abs() + 1e-8 * (1.0 + kkt.r.amax());
    for _ in 0..4 {
        log::debug!("corrector QP nonconvex, shifting Hessian by {mu:e}");
        let h = &kkt.r + DMatrix::identity(kkt.r.nrows(), kkt.r.ncols()) * mu;
        match solve(h, kkt.grad_l.clone()) {
            Ok(sol) => {
                let sol = sol.into_optimal()?;
                return Ok((sol.x, sol.y_eq.rows(0, d).into_owned()));
            }
            Err(Error::NonconvexQp { min_eigenvalue }) => mu = 2.0 * (mu + min_eigenvalue.abs()),
            Err(e) => return Err(e),
        }
    }
    Err(Error::NonconvexQp {
        min_eigenvalue: min_eig,
    })
}

/// Iterate [`jn_step`] until `π ≤ ε` or the iteration cap.
pub fn correct(
    ocp: &Ocp,
    p: &DVector<f64>,
    z0: PrimalDual,
    cfg: &CorrectorConfig,
) -> Result<CorrectorReport> {
    assert!(cfg.epsilon > 0.0, "corrector tolerance must be positive");
    let mut z = z0;
    let mut residuals = vec![natural_residual(ocp, p, &z)?];
    let mut iterations = 0;
    loop {
        let res = *residuals.last().unwrap();
        if res <= cfg.epsilon {
            return Ok(CorrectorReport {
                z,
                iterations,
                residuals,
                status: CorrectorStatus::Converged,
                failure: None,
            });
        }
        if iterations >= cfg.max_iter {
            return Ok(CorrectorReport {
                z,
                iterations,
                residuals,
                status: CorrectorStatus::MaxIter,
                failure: None,
            });
        }
        let (dv, dq) = match jn_step(ocp, p, &z, cfg.rho, &cfg.qp) {
            Ok(step) => step,
            Err(e @ (Error::QpFailed { .. } | Error::NonconvexQp { .. })) => {
                return Ok(CorrectorReport {
                    z,
                    iterations,
                    residuals,
                    status: CorrectorStatus::QpFailure,
                    failure: Some(e.to_string()),
                });
            }
            Err(e) => return Err(e),
        };
        z = z.add(&dv, &dq);
        iterations += 1;
        residuals.push(natural_residual(ocp, p, &z)?);
    }
}
