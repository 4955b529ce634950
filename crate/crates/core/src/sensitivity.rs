//! Semiderivative predictor for the parametric OCP.
//!
//! Given a reference solution `z̄` at `p̄`, the directional derivative of the
//! solution map along `Δp` is the solution of a linear VI over the critical
//! cone `K_V × ℝᵈ`. It is computed from the equivalent QP
//!
//! ```text
//! minimize   ½ Δvᵀ R̃ Δv + (P Δp)ᵀ Δv
//! subject to G Δv + Q Δp = 0,  Δv ∈ K_V
//! ```
//!
//! with `R̃ = R + ρGᵀG`.

use nalgebra::{DMatrix, DVector};

use crate::corrector::natural_residual;
use crate::error::{Error, Result};
use crate::linalg::{self, OrderedQr};
use crate::ocp::{KktData, Ocp, PrimalDual};
use crate::polyhedral::{ConeRep, Polyhedron, DEFAULT_TOL};
use crate::qp::{solve_qp, QpProblem, QpSettings, QpSolution};

/// How the Hessian regularization weight is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum RhoPolicy {
    /// Start unregularized and escalate only if the QP turns out nonconvex.
    #[default]
    Auto,
    /// Always use the given weight (0 disables regularization).
    Fixed(f64),
}

impl RhoPolicy {
    /// Weights to try in order.
    pub(crate) fn schedule(&self, r: &DMatrix<f64>, g: &DMatrix<f64>) -> Vec<f64> {
        match *self {
            RhoPolicy::Fixed(rho) => vec![rho],
            RhoPolicy::Auto => {
                let gtg = g.transpose() * g;
                let scale = 1.0 + linalg::mat_inf_norm(r) / linalg::mat_inf_norm(&gtg).max(1.0);
                vec![0.0, scale, 10.0 * scale, 100.0 * scale]
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct PredictorConfig {
    pub rho: RhoPolicy,
    /// Active-set and cone tolerance.
    pub cone_tol: f64,
    /// Refuse to predict from a reference whose natural residual exceeds this.
    /// `None` skips the check.
    pub reference_limit: Option<f64>,
    /// Refuse to run unless `ZᵀRZ ≻ 0` on `null(G)`. When off, the QP's own
    /// convexity check on the critical face is the only gate.
    pub require_regularity: bool,
    pub qp: QpSettings,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        Self {
            rho: RhoPolicy::Auto,
            cone_tol: DEFAULT_TOL,
            reference_limit: Some(1e-4),
            require_regularity: false,
            qp: QpSettings::default(),
        }
    }
}

/// Output of [`predictor_step`].
#[derive(Debug, Clone)]
pub struct SensitivityStep {
    pub dv: DVector<f64>,
    pub dq: DVector<f64>,
    pub regularized: bool,
    pub rho: f64,
    /// Critical cone the step was computed over (rows of the stacked `M`).
    pub cone: ConeRep,
    pub qp_iterations: usize,
}

/// `ZᵀRZ ≻ 0` with `Z` an orthonormal basis of `null(G)`.
///
/// Returns `Err(RankDeficient)` if `G` is not surjective.
pub fn regularity_check(kkt: &KktData, tol: f64) -> Result<bool> {
    let d = kkt.g.nrows();
    let qr = OrderedQr::new(&kkt.g.transpose(), 1e-10);
    if qr.rank() < d {
        return Err(Error::RankDeficient {
            rank: qr.rank(),
            rows: d,
        });
    }
    let z = qr.null_space();
    let reduced = linalg::symmetrize(&(z.transpose() * &kkt.r * &z));
    Ok(cholesky_pivots_exceed(&reduced, tol))
}

/// Plain Cholesky that fails as soon as a pivot drops to `tol` or below.
fn cholesky_pivots_exceed(a: &DMatrix<f64>, tol: f64) -> bool {
    let n = a.nrows();
    let mut l = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut pivot = a[(j, j)];
        for k in 0..j {
            pivot -= l[(j, k)] * l[(j, k)];
        }
        if !(pivot > tol) {
            return false;
        }
        let ljj = pivot.sqrt();
        l[(j, j)] = ljj;
        for i in j + 1..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / ljj;
        }
    }
    true
}

/// `R + ρGᵀG`.
pub fn regularize_hessian(kkt: &KktData, rho: f64) -> DMatrix<f64> {
    assert!(rho > 0.0, "regularization weight must be positive");
    &kkt.r + (kkt.g.transpose() * &kkt.g) * rho
}

/// Critical cone of `V` at `v̄` for the normal element `−∇_v L(p̄, z̄)`.
///
/// `V` is a product of stage sets, so the cone is assembled block by block.
/// Each block's normal element is first projected onto that block's normal
/// cone, which strips the residual noise of an inexact reference solution.
/// Row indices refer to [`Ocp::stack_constraints`].
pub fn critical_cone_v(
    ocp: &Ocp,
    grad_l: &DVector<f64>,
    v: &DVector<f64>,
    tol: f64,
) -> Result<ConeRep> {
    let mut ineq_rows = Vec::new();
    let mut eq_rows = Vec::new();
    let mut ortho = DVector::zeros(v.len());
    let mut row0 = 0;
    for (range, poly) in ocp.constraint_blocks() {
        let l = poly.num_rows();
        if l > 0 {
            let x = v.rows_range(range.clone()).into_owned();
            let n = -grad_l.rows_range(range.clone());
            let n = poly.project_onto_normal_cone(&x, &n, tol)?;
            let cone = poly.critical_cone(&x, &n, tol)?;
            ineq_rows.extend(cone.ineq_rows.iter().map(|i| i + row0));
            eq_rows.extend(cone.eq_rows.iter().map(|i| i + row0));
            ortho.rows_range_mut(range).copy_from(&n);
        }
        row0 += l;
    }
    Ok(ConeRep {
        ineq_rows,
        eq_rows,
        ortho,
    })
}

/// Critical cone at a reference point, computing `∇_v L` on the fly.
pub fn critical_cone_at(ocp: &Ocp, p: &DVector<f64>, z: &PrimalDual, tol: f64) -> Result<ConeRep> {
    let f = ocp.eval_F(p, z)?;
    let grad_l = f.rows(0, ocp.num_primal()).into_owned();
    critical_cone_v(ocp, &grad_l, &z.v, tol)
}

/// Semiderivative of the solution map at `(p̄, z̄)` in direction `Δp`.
pub fn predictor_step(
    ocp: &Ocp,
    p_bar: &DVector<f64>,
    z_bar: &PrimalDual,
    dp: &DVector<f64>,
    cfg: &PredictorConfig,
) -> Result<SensitivityStep> {
    if dp.len() != ocp.n() {
        return Err(Error::Dimension(format!(
            "dp has length {} (expected {})",
            dp.len(),
            ocp.n()
        )));
    }
    if let Some(limit) = cfg.reference_limit {
        let residual = natural_residual(ocp, p_bar, z_bar)?;
        if residual > limit {
            return Err(Error::ReferenceNotConverged { residual, limit });
        }
    }
    let kkt = ocp.eval_kkt_data(p_bar, z_bar)?;
    if !regularity_check(&kkt, 1e-10)? {
        if cfg.require_regularity {
            return Err(Error::RegularityViolated(
                "reduced Hessian is not positive definite on null(G)".into(),
            ));
        }
        log::debug!("reduced Hessian indefinite on null(G); relying on the critical face");
    }
    let stacked = ocp.stack_constraints();
    let cone = critical_cone_v(ocp, &kkt.grad_l, &z_bar.v, cfg.cone_tol)?;
    solve_predictor_qp(&kkt, &stacked, cone, dp, cfg)
}

/// Assemble and solve the predictor QP for a given cone.
pub fn solve_predictor_qp(
    kkt: &KktData,
    stacked: &Polyhedron,
    cone: ConeRep,
    dp: &DVector<f64>,
    cfg: &PredictorConfig,
) -> Result<SensitivityStep> {
    let d = kkt.g.nrows();
    let j = kkt.g.ncols();
    let q_dp = &kkt.qmat * dp;
    let c = &kkt.pmat * dp;

    // Equalities: G rows first so their multipliers are always the ones kept.
    let eq = linalg::select_rows(stacked.gamma(), &cone.eq_rows);
    let ortho = DMatrix::from_row_slice(1, j, cone.ortho.as_slice());
    let mut blocks = vec![&kkt.g, &eq];
    let with_ortho = cone.ortho.amax() > 0.0;
    if with_ortho {
        blocks.push(&ortho);
    }
    let a_eq = linalg::vstack(&blocks, j);
    let mut b_eq = DVector::zeros(a_eq.nrows());
    b_eq.rows_mut(0, d).copy_from(&-&q_dp);
    let a_in = linalg::select_rows(stacked.gamma(), &cone.ineq_rows);
    let b_in = DVector::zeros(a_in.nrows());

    let mut last_err = None;
    for rho in cfg.rho.schedule(&kkt.r, &kkt.g) {
        let h = if rho > 0.0 {
            regularize_hessian(kkt, rho)
        } else {
            kkt.r.clone()
        };
        let qp = QpProblem::new(h, c.clone())
            .with_equalities(a_eq.clone(), b_eq.clone())
            .with_inequalities(a_in.clone(), b_in.clone());
        match solve_qp(&qp, &cfg.qp, None) {
            Ok(sol) => {
                let sol: QpSolution = sol.into_optimal()?;
                let dq = sol.y_eq.rows(0, d) - &q_dp * rho;
                return Ok(SensitivityStep {
                    dv: sol.x,
                    dq,
                    regularized: rho > 0.0,
                    rho,
                    cone,
                    qp_iterations: sol.iterations,
                });
            }
            Err(e @ Error::NonconvexQp { .. }) => {
                log::debug!("predictor QP nonconvex at rho = {rho:e}, escalating");
                last_err = Some(e);
            }
            Err(e) => return Err(e),
        }
    }
    Err(Error::RegularityViolated(format!(
        "predictor QP stayed nonconvex after rho escalation ({})",
        last_err.map(|e| e.to_string()).unwrap_or_default()
    )))
}

/// Natural residual of the linear VI over `K_V × ℝᵈ` at a candidate step.
pub fn lvi_residual(
    kkt: &KktData,
    stacked: &Polyhedron,
    cone: &ConeRep,
    dp: &DVector<f64>,
    dv: &DVector<f64>,
    dq: &DVector<f64>,
) -> Result<f64> {
    let j = dv.len();
    let fv = &kkt.r * dv + kkt.g.transpose() * dq + &kkt.pmat * dp;
    let fg = &kkt.g * dv + &kkt.qmat * dp;
    let y = dv - &fv;

    // Projection onto the cone.
    let eq = linalg::select_rows(stacked.gamma(), &cone.eq_rows);
    let ortho = DMatrix::from_row_slice(1, j, cone.ortho.as_slice());
    let a_eq = linalg::vstack(&[&eq, &ortho], j);
    let a_in = linalg::select_rows(stacked.gamma(), &cone.ineq_rows);
    let qp = QpProblem::new(DMatrix::identity(j, j), -&y)
        .with_equalities(a_eq.clone(), DVector::zeros(a_eq.nrows()))
        .with_inequalities(a_in.clone(), DVector::zeros(a_in.nrows()));
    let proj = solve_qp(&qp, &QpSettings::default(), None)?
        .into_optimal()?
        .x;
    Ok(((dv - proj).norm_squared() + fg.norm_squared()).sqrt())
}
