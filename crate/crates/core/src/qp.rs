//! Dense convex QP solver.
//!
//! Solves
//!
//! ```text
//! minimize   ½ xᵀHx + cᵀx
//! subject to A_eq x = b_eq,  A_in x ≤ b_in
//! ```
//!
//! Equality constraints are eliminated with an order-preserving QR of `A_eqᵀ`
//! (dependent rows are detected and checked for consistency), and the reduced
//! inequality-constrained problem is solved with a Mehrotra predictor-corrector
//! interior point method. The interior point result is then polished by
//! solving the equality-constrained QP on the identified active set, which
//! recovers vertex-accurate primal solutions even when constraints are
//! duplicated or weakly active.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen, LU};

use crate::error::{Error, Result};
use crate::linalg::{self, OrderedQr};

/// `minimize ½xᵀHx + cᵀx  s.t.  A_eq x = b_eq, A_in x ≤ b_in`.
#[derive(Debug, Clone)]
pub struct QpProblem {
    pub h: DMatrix<f64>,
    pub c: DVector<f64>,
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
    pub a_in: DMatrix<f64>,
    pub b_in: DVector<f64>,
}

impl QpProblem {
    /// Unconstrained problem; `h` is symmetrized.
    pub fn new(h: DMatrix<f64>, c: DVector<f64>) -> Self {
        let n = c.len();
        Self {
            h: linalg::symmetrize(&h),
            c,
            a_eq: DMatrix::zeros(0, n),
            b_eq: DVector::zeros(0),
            a_in: DMatrix::zeros(0, n),
            b_in: DVector::zeros(0),
        }
    }

    pub fn with_equalities(mut self, a: DMatrix<f64>, b: DVector<f64>) -> Self {
        self.a_eq = a;
        self.b_eq = b;
        self
    }

    pub fn with_inequalities(mut self, a: DMatrix<f64>, b: DVector<f64>) -> Self {
        self.a_in = a;
        self.b_in = b;
        self
    }

    pub fn dim(&self) -> usize {
        self.c.len()
    }

    fn validate(&self) -> Result<()> {
        let n = self.dim();
        if self.h.shape() != (n, n) {
            return Err(Error::Dimension(format!(
                "H is {:?}, expected {n}x{n}",
                self.h.shape()
            )));
        }
        if self.a_eq.ncols() != n || self.a_eq.nrows() != self.b_eq.len() {
            return Err(Error::Dimension(format!(
                "A_eq is {:?} with b_eq of length {}",
                self.a_eq.shape(),
                self.b_eq.len()
            )));
        }
        if self.a_in.ncols() != n || self.a_in.nrows() != self.b_in.len() {
            return Err(Error::Dimension(format!(
                "A_in is {:?} with b_in of length {}",
                self.a_in.shape(),
                self.b_in.len()
            )));
        }
        Ok(())
    }

    /// Stationarity, feasibility and complementarity residuals at a primal-dual point.
    pub fn kkt_residual(&self, x: &DVector<f64>, y_eq: &DVector<f64>, y_in: &DVector<f64>) -> f64 {
        let stat =
            &self.h * x + &self.c + self.a_eq.transpose() * y_eq + self.a_in.transpose() * y_in;
        let mut res = linalg::inf_norm(&stat);
        if !self.b_eq.is_empty() {
            res = res.max(linalg::inf_norm(&(&self.a_eq * x - &self.b_eq)));
        }
        if !self.b_in.is_empty() {
            let slack = &self.a_in * x - &self.b_in;
            for (i, s) in slack.iter().enumerate() {
                res = res.max(s.max(0.0)).max((y_in[i] * s).abs()).max(-y_in[i]);
            }
        }
        res
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    MaxIter,
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub y_eq: DVector<f64>,
    pub y_in: DVector<f64>,
    pub status: QpStatus,
    pub kkt_residual: f64,
    pub iterations: usize,
}

impl QpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == QpStatus::Optimal
    }

    /// Turn a non-optimal status into an error.
    pub fn into_optimal(self) -> Result<Self> {
        if self.is_optimal() {
            Ok(self)
        } else {
            Err(Error::QpFailed {
                status: self.status,
                kkt_residual: self.kkt_residual,
            })
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct QpSettings {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_iter: 100,
        }
    }
}

/// Thin handle bundling settings; carries no state between solves.
#[derive(Debug, Clone, Default)]
pub struct QpSolver {
    pub settings: QpSettings,
}

impl QpSolver {
    pub fn new(settings: QpSettings) -> Self {
        Self { settings }
    }

    pub fn solve(&self, qp: &QpProblem, warm: Option<&DVector<f64>>) -> Result<QpSolution> {
        solve_qp(qp, &self.settings, warm)
    }
}

// Relative threshold for declaring an equality row dependent.
const RANK_TOL: f64 = 1e-10;

/// Solve a convex QP. See the module docs for the method.
///
/// Returns `Err(NonconvexQp)` when the Hessian is indefinite on the null space
/// of `A_eq`; infeasibility, unboundedness and the iteration cap are reported
/// through [`QpSolution::status`].
pub fn solve_qp(
    qp: &QpProblem,
    settings: &QpSettings,
    warm: Option<&DVector<f64>>,
) -> Result<QpSolution> {
    qp.validate()?;
    let n = qp.dim();
    let p = qp.b_eq.len();
    let m = qp.b_in.len();

    // Eliminate the equalities: x = x_p + Z w.
    let mut eq_consistent = true;
    let (x_p, z, qr) = if p > 0 {
        let qr = OrderedQr::new(&qp.a_eq.transpose(), RANK_TOL);
        let r11 = qr.r_selected();
        let b_sel: Vec<f64> = qr.selected().iter().map(|&i| qp.b_eq[i]).collect();
        let x_y = linalg::solve_upper_transpose(&r11, &b_sel);
        let b_scale = 1.0 + linalg::inf_norm(&qp.b_eq);
        for c in qr.rejected() {
            let lhs: f64 = qr
                .column_coefficients(c)
                .iter()
                .zip(&x_y)
                .map(|(a, b)| a * b)
                .sum();
            if (lhs - qp.b_eq[c]).abs() > 1e-7 * b_scale {
                eq_consistent = false;
            }
        }
        let mut xp = vec![0.0; n];
        xp[..x_y.len()].copy_from_slice(&x_y);
        qr.apply_q(&mut xp);
        (DVector::from_vec(xp), qr.null_space(), Some(qr))
    } else {
        (DVector::zeros(n), DMatrix::identity(n, n), None)
    };

    let k = z.ncols();
    let hz = &qp.h * &z;
    let h_red = linalg::symmetrize(&(z.transpose() * &hz));
    let c_red = z.transpose() * (&qp.h * &x_p + &qp.c);
    let a_red = &qp.a_in * &z;
    let b_red = &qp.b_in - &qp.a_in * &x_p;

    check_convex(&h_red)?;

    let w0 = match warm {
        Some(x0) if x0.len() == n => z.transpose() * (x0 - &x_p),
        _ => DVector::zeros(k),
    };

    let mut reduced = if !eq_consistent {
        ReducedSolution {
            w: DVector::zeros(k),
            lam: DVector::zeros(m),
            status: QpStatus::Infeasible,
            iterations: 0,
        }
    } else {
        interior_point(&h_red, &c_red, &a_red, &b_red, w0, settings)
    };

    if m > 0 && matches!(reduced.status, QpStatus::Optimal | QpStatus::MaxIter) {
        if let Some((w, lam)) = polish(&h_red, &c_red, &a_red, &b_red, &reduced, settings.tol) {
            reduced.w = w;
            reduced.lam = lam;
            reduced.status = QpStatus::Optimal;
        }
    }

    let x = &x_p + &z * &reduced.w;
    let y_in = reduced.lam;
    let mut y_eq = DVector::zeros(p);
    if let Some(qr) = &qr {
        let s = &qp.h * &x + &qp.c + qp.a_in.transpose() * &y_in;
        let mut t: Vec<f64> = (-s).iter().copied().collect();
        qr.apply_qt(&mut t);
        let y_sel = linalg::solve_upper(&qr.r_selected(), &t[..qr.rank()]);
        for (&i, v) in qr.selected().iter().zip(y_sel) {
            y_eq[i] = v;
        }
    }
    let kkt_residual = qp.kkt_residual(&x, &y_eq, &y_in);
    Ok(QpSolution {
        x,
        y_eq,
        y_in,
        status: reduced.status,
        kkt_residual,
        iterations: reduced.iterations,
    })
}

fn check_convex(h: &DMatrix<f64>) -> Result<()> {
    if h.nrows() == 0 || Cholesky::new(h.clone()).is_some() {
        return Ok(());
    }
    let eig = SymmetricEigen::new(h.clone());
    let min = eig.eigenvalues.min();
    let scale = 1.0 + eig.eigenvalues.amax();
    if min < -1e-9 * scale {
        return Err(Error::NonconvexQp {
            min_eigenvalue: min,
        });
    }
    Ok(())
}

struct ReducedSolution {
    w: DVector<f64>,
    lam: DVector<f64>,
    status: QpStatus,
    iterations: usize,
}

/// Cholesky of an SPD matrix with a static-regularization fallback and
/// iterative refinement against the unregularized matrix.
struct SpdFactor {
    original: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    regularized: bool,
}

impl SpdFactor {
    fn new(k: DMatrix<f64>) -> Option<Self> {
        if let Some(chol) = Cholesky::new(k.clone()) {
            return Some(Self {
                original: k,
                chol,
                regularized: false,
            });
        }
        let scale = 1.0 + k.diagonal().amax();
        let mut delta = 1e-10 * scale;
        for _ in 0..8 {
            let shifted = &k + DMatrix::identity(k.nrows(), k.nrows()) * delta;
            if let Some(chol) = Cholesky::new(shifted) {
                return Some(Self {
                    original: k,
                    chol,
                    regularized: true,
                });
            }
            delta *= 100.0;
        }
        None
    }

    fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        let mut x = self.chol.solve(rhs);
        if self.regularized {
            for _ in 0..5 {
                let r = rhs - &self.original * &x;
                x += self.chol.solve(&r);
            }
        }
        x
    }
}

fn interior_point(
    h: &DMatrix<f64>,
    c: &DVector<f64>,
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    w0: DVector<f64>,
    settings: &QpSettings,
) -> ReducedSolution {
    let k = c.len();
    let m = b.len();

    if m == 0 {
        return unconstrained(h, c);
    }
    if k == 0 {
        let feasible = b.iter().all(|&bi| bi >= -settings.tol * (1.0 + b.amax()));
        return ReducedSolution {
            w: DVector::zeros(0),
            lam: DVector::zeros(m),
            status: if feasible {
                QpStatus::Optimal
            } else {
                QpStatus::Infeasible
            },
            iterations: 0,
        };
    }

    let c_scale = 1.0 + linalg::inf_norm(c);
    let b_scale = 1.0 + linalg::inf_norm(b);
    let a_scale = 1.0 + a.amax();

    let mut w = w0;
    let mut s = b - a * &w;
    s.apply(|si| *si = si.max(1.0));
    let mut lam = DVector::from_element(m, 1.0);

    let mut best = (f64::INFINITY, w.clone(), lam.clone());
    let mut status = QpStatus::MaxIter;
    let mut iterations = 0;

    for iter in 0..settings.max_iter {
        iterations = iter;
        let r_d = h * &w + c + a.transpose() * &lam;
        let r_p = a * &w + &s - b;
        let mu = s.dot(&lam) / m as f64;

        let dual_res = linalg::inf_norm(&r_d) / c_scale;
        let primal_res = linalg::inf_norm(&r_p) / b_scale;
        let merit = dual_res.max(primal_res).max(mu);
        if merit < best.0 {
            best = (merit, w.clone(), lam.clone());
        }
        if dual_res <= settings.tol && primal_res <= settings.tol && mu <= settings.tol {
            status = QpStatus::Optimal;
            break;
        }

        let lam_norm = linalg::inf_norm(&lam);
        if lam_norm > 1e10 * c_scale {
            // Farkas-type certificate: Aᵀλ ≈ 0 with bᵀλ < 0.
            let at_lam = a.transpose() * &lam;
            if b.dot(&lam) < 0.0 && linalg::inf_norm(&at_lam) <= 1e-6 * lam_norm * a_scale {
                status = QpStatus::Infeasible;
                break;
            }
        }
        if linalg::inf_norm(&w) > 1e12 * (1.0 + b_scale) {
            status = QpStatus::Unbounded;
            break;
        }

        let d = lam.component_div(&s);
        let mut kmat = h.clone();
        let ad = DMatrix::from_fn(m, k, |i, j| a[(i, j)] * d[i]);
        kmat.gemm_tr(1.0, a, &ad, 1.0);
        let Some(factor) = SpdFactor::new(kmat) else {
            break;
        };

        let newton = |r_c: &DVector<f64>| {
            // Δw from (H + AᵀDA)Δw = −r_d − Aᵀ S⁻¹(−r_c + Λ r_p)
            let t = (-r_c + lam.component_mul(&r_p)).component_div(&s);
            let rhs = -&r_d - a.transpose() * &t;
            let dw = factor.solve(&rhs);
            let ds = -&r_p - a * &dw;
            let dl = (-r_c - lam.component_mul(&ds)).component_div(&s);
            (dw, ds, dl)
        };

        let r_c_aff = s.component_mul(&lam);
        let (_, ds_aff, dl_aff) = newton(&r_c_aff);
        let alpha_aff = max_step(&s, &ds_aff).min(max_step(&lam, &dl_aff));
        let mu_aff = (&s + &ds_aff * alpha_aff).dot(&(&lam + &dl_aff * alpha_aff)) / m as f64;
        let sigma = (mu_aff / mu).powi(3).clamp(0.0, 1.0);

        let r_c = &r_c_aff + ds_aff.component_mul(&dl_aff) - DVector::from_element(m, sigma * mu);
        let (dw, ds, dl) = newton(&r_c);
        let alpha = (0.995 * max_step(&s, &ds).min(max_step(&lam, &dl))).min(1.0);

        w += &dw * alpha;
        s += &ds * alpha;
        lam += &dl * alpha;
        s.apply(|si| *si = si.max(1e-300));
        lam.apply(|li| *li = li.max(1e-300));
        iterations = iter + 1;
    }

    if status == QpStatus::MaxIter {
        w = best.1;
        lam = best.2;
    }
    ReducedSolution {
        w,
        lam,
        status,
        iterations,
    }
}

fn unconstrained(h: &DMatrix<f64>, c: &DVector<f64>) -> ReducedSolution {
    let k = c.len();
    let w = match SpdFactor::new(h.clone()) {
        Some(f) => f.solve(&-c),
        None => DVector::zeros(k),
    };
    let res = linalg::inf_norm(&(h * &w + c));
    let status = if res <= 1e-8 * (1.0 + linalg::inf_norm(c)) {
        QpStatus::Optimal
    } else {
        QpStatus::Unbounded
    };
    ReducedSolution {
        w,
        lam: DVector::zeros(0),
        status,
        iterations: 1,
    }
}

fn max_step(x: &DVector<f64>, dx: &DVector<f64>) -> f64 {
    x.iter()
        .zip(dx.iter())
        .filter(|(_, &d)| d < 0.0)
        .map(|(&xi, &d)| -xi / d)
        .fold(1.0, f64::min)
}

/// Re-solve on the active set `{i : λᵢ > sᵢ}` as an equality-constrained QP.
fn polish(
    h: &DMatrix<f64>,
    c: &DVector<f64>,
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    ipm: &ReducedSolution,
    tol: f64,
) -> Option<(DVector<f64>, DVector<f64>)> {
    let k = c.len();
    let m = b.len();
    let slack = b - a * &ipm.w;
    let active: Vec<usize> = (0..m).filter(|&i| ipm.lam[i] > slack[i]).collect();
    let na = active.len();
    let dim = k + na;

    let mut kkt = DMatrix::zeros(dim, dim);
    kkt.view_mut((0, 0), (k, k)).copy_from(h);
    for (r, &i) in active.iter().enumerate() {
        for j in 0..k {
            kkt[(k + r, j)] = a[(i, j)];
            kkt[(j, k + r)] = a[(i, j)];
        }
    }
    let mut rhs = DVector::zeros(dim);
    rhs.rows_mut(0, k).copy_from(&-c);
    for (r, &i) in active.iter().enumerate() {
        rhs[k + r] = b[i];
    }

    let delta = 1e-9 * (1.0 + h.amax());
    let mut reg = kkt.clone();
    for i in 0..k {
        reg[(i, i)] += delta;
    }
    for i in k..dim {
        reg[(i, i)] -= delta;
    }
    let lu = LU::new(reg);
    let mut sol = lu.solve(&rhs)?;
    let rhs_scale = 1.0 + linalg::inf_norm(&rhs);
    for _ in 0..50 {
        let r = &rhs - &kkt * &sol;
        if linalg::inf_norm(&r) <= 1e-14 * rhs_scale {
            break;
        }
        sol += lu.solve(&r)?;
    }
    if sol.iter().any(|v| !v.is_finite()) {
        return None;
    }

    let w = sol.rows(0, k).into_owned();
    let mut lam = DVector::zeros(m);
    let lam_scale = 1.0 + linalg::inf_norm(&ipm.lam);
    for (r, &i) in active.iter().enumerate() {
        let l = sol[k + r];
        if l < -1e-8 * lam_scale {
            return None;
        }
        lam[i] = l.max(0.0);
    }
    let viol = (a * &w - b).max();
    if m > 0 && viol > tol * (1.0 + linalg::inf_norm(b)) {
        return None;
    }
    let stat = linalg::inf_norm(&(h * &w + c + a.transpose() * &lam));
    let ipm_stat = linalg::inf_norm(&(h * &ipm.w + c + a.transpose() * &ipm.lam));
    if stat > ipm_stat.max(tol * (1.0 + linalg::inf_norm(c))) {
        return None;
    }
    Some((w, lam))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::{dmatrix, dvector};

    fn solve(qp: &QpProblem) -> QpSolution {
        solve_qp(qp, &QpSettings::default(), None).unwrap()
    }

    #[test]
    fn unconstrained_minimizer() {
        let qp = QpProblem::new(DMatrix::identity(2, 2), dvector![-1.0, -2.0]);
        let sol = solve(&qp);
        assert!(sol.is_optimal());
        assert_relative_eq!(sol.x, dvector![1.0, 2.0], epsilon = 1e-12);
    }

    #[test]
    fn equality_constrained_hand_kkt() {
        let qp = QpProblem::new(DMatrix::identity(2, 2), dvector![-1.0, -2.0])
            .with_equalities(dmatrix![1.0, 1.0], dvector![1.0]);
        let sol = solve(&qp);
        assert_relative_eq!(sol.x, dvector![0.0, 1.0], epsilon = 1e-12);
        assert_relative_eq!(sol.y_eq[0], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn separable_clipping_multipliers() {
        let qp = QpProblem::new(DMatrix::identity(2, 2), dvector![-1.0, -2.0])
            .with_inequalities(DMatrix::identity(2, 2), dvector![0.0, 0.0]);
        let sol = solve(&qp);
        assert!(sol.is_optimal());
        assert_relative_eq!(sol.x, dvector![0.0, 0.0], epsilon = 1e-12);
        assert_relative_eq!(sol.y_in, dvector![1.0, 2.0], epsilon = 1e-10);
        assert!(sol.kkt_residual <= 1e-9);
    }

    #[test]
    fn indefinite_reduced_hessian_is_rejected() {
        let qp = QpProblem::new(dmatrix![1.0, 0.0; 0.0, -1.0], dvector![0.0, 0.0]);
        assert!(matches!(
            solve_qp(&qp, &QpSettings::default(), None),
            Err(Error::NonconvexQp { .. })
        ));
        // Same Hessian is fine once the negative direction is fixed by an equality.
        let qp = qp.with_equalities(dmatrix![0.0, 1.0], dvector![0.5]);
        let sol = solve(&qp);
        assert_relative_eq!(sol.x, dvector![0.0, 0.5], epsilon = 1e-12);
    }

    #[test]
    fn empty_feasible_set_is_infeasible() {
        let qp = QpProblem::new(DMatrix::identity(1, 1), dvector![0.0])
            .with_inequalities(dmatrix![1.0; -1.0], dvector![0.0, -1.0]);
        let sol = solve(&qp);
        assert_eq!(sol.status, QpStatus::Infeasible);
    }

    #[test]
    fn inconsistent_equalities_are_infeasible() {
        let qp = QpProblem::new(DMatrix::identity(2, 2), dvector![0.0, 0.0])
            .with_equalities(dmatrix![1.0, 1.0; 1.0, 1.0], dvector![1.0, 2.0]);
        assert_eq!(solve(&qp).status, QpStatus::Infeasible);
    }

    #[test]
    fn duplicated_equalities_are_consistent() {
        let qp = QpProblem::new(DMatrix::identity(2, 2), dvector![-1.0, -2.0])
            .with_equalities(dmatrix![1.0, 1.0; 1.0, 1.0], dvector![1.0, 1.0]);
        let sol = solve(&qp);
        assert!(sol.is_optimal());
        assert_relative_eq!(sol.x, dvector![0.0, 1.0], epsilon = 1e-12);
        assert_relative_eq!(sol.y_eq.sum(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn unbounded_linear_objective() {
        let qp = QpProblem::new(DMatrix::zeros(1, 1), dvector![-1.0])
            .with_inequalities(dmatrix![-1.0], dvector![0.0]);
        assert_eq!(solve(&qp).status, QpStatus::Unbounded);
    }

    #[test]
    fn warm_start_reaches_same_solution() {
        let qp = QpProblem::new(dmatrix![2.0, 0.5; 0.5, 1.0], dvector![-1.0, 1.0])
            .with_inequalities(dmatrix![1.0, 1.0; -1.0, 0.0], dvector![0.5, 0.0]);
        let cold = solve(&qp);
        let warm = solve_qp(&qp, &QpSettings::default(), Some(&cold.x)).unwrap();
        assert_relative_eq!(cold.x, warm.x, epsilon = 1e-10);
    }
}
