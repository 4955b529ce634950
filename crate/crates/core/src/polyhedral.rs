//! Geometry of polyhedral sets `{x | Γx ≤ b}`: active sets, Euclidean
//! projection, normal-cone membership and critical cones.
//!
//! The critical cone of `P` at `x` for a normal element `n ∈ N_P(x)` is
//! `{y ∈ T_P(x) | nᵀy = 0}`. Active rows whose normal is not needed to
//! generate `n` (the "redundant" rows) stay inequalities; every other active
//! row becomes an equality. Redundancy of row `i` is decided by testing
//! `n ∈ N_{Cᵢ}(x)`, where `Cᵢ` is `P` with row `i` removed, through the
//! projection identity `Π_{Cᵢ}(x + n) = x`.

use log::warn;
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{self, OrderedQr};
use crate::qp::{solve_qp, QpProblem, QpSettings};

/// Default tolerance for active-set and projection-equality tests.
pub const DEFAULT_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct Polyhedron {
    gamma: DMatrix<f64>,
    b: DVector<f64>,
}

impl Polyhedron {
    pub fn new(gamma: DMatrix<f64>, b: DVector<f64>) -> Result<Self> {
        if gamma.nrows() != b.len() {
            return Err(Error::Dimension(format!(
                "polyhedron has {} rows but b has length {}",
                gamma.nrows(),
                b.len()
            )));
        }
        Ok(Self { gamma, b })
    }

    /// `ℝⁿ`, described by zero rows.
    pub fn whole_space(n: usize) -> Self {
        Self {
            gamma: DMatrix::zeros(0, n),
            b: DVector::zeros(0),
        }
    }

    /// Box `lower ≤ x ≤ upper`. Rows come in pairs per component: the upper
    /// bound `x_j ≤ upper_j` followed by the lower bound `−x_j ≤ −lower_j`.
    /// Infinite bounds produce no row.
    pub fn from_box(lower: &[f64], upper: &[f64]) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::Dimension("box bounds differ in length".into()));
        }
        let n = lower.len();
        let mut rows: Vec<(usize, f64, f64)> = Vec::new();
        for j in 0..n {
            if upper[j].is_finite() {
                rows.push((j, 1.0, upper[j]));
            }
            if lower[j].is_finite() {
                rows.push((j, -1.0, -lower[j]));
            }
        }
        let mut gamma = DMatrix::zeros(rows.len(), n);
        let mut b = DVector::zeros(rows.len());
        for (r, (j, sign, bound)) in rows.into_iter().enumerate() {
            gamma[(r, j)] = sign;
            b[r] = bound;
        }
        Ok(Self { gamma, b })
    }

    pub fn gamma(&self) -> &DMatrix<f64> {
        &self.gamma
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn dim(&self) -> usize {
        self.gamma.ncols()
    }

    pub fn num_rows(&self) -> usize {
        self.b.len()
    }

    /// The set described by every row except `row`.
    pub fn without_row(&self, row: usize) -> Self {
        let keep: Vec<usize> = (0..self.num_rows()).filter(|&i| i != row).collect();
        Self {
            gamma: linalg::select_rows(&self.gamma, &keep),
            b: DVector::from_iterator(keep.len(), keep.iter().map(|&i| self.b[i])),
        }
    }

    /// Same set with row `row` appended a second time.
    pub fn with_duplicated_row(&self, row: usize) -> Self {
        let mut idx: Vec<usize> = (0..self.num_rows()).collect();
        idx.push(row);
        Self {
            gamma: linalg::select_rows(&self.gamma, &idx),
            b: DVector::from_iterator(idx.len(), idx.iter().map(|&i| self.b[i])),
        }
    }

    /// Largest constraint violation `max(Γx − b)⁺` (0 when there are no rows).
    pub fn violation(&self, x: &DVector<f64>) -> f64 {
        if self.num_rows() == 0 {
            return 0.0;
        }
        (&self.gamma * x - &self.b).max().max(0.0)
    }

    fn scaled_tol(&self, tol: f64) -> f64 {
        let bn = if self.b.is_empty() {
            0.0
        } else {
            self.b.amax()
        };
        tol * (1.0 + bn)
    }

    /// Indices `{i | Γᵢx ≥ bᵢ − tol·(1 + ‖b‖∞)}`.
    ///
    /// Fails when `x` violates some row by more than the same tolerance; the
    /// error names the worst row.
    pub fn active_set(&self, x: &DVector<f64>, tol: f64) -> Result<Vec<usize>> {
        self.check_dim(x)?;
        let eff = self.scaled_tol(tol);
        let slack = &self.gamma * x - &self.b;
        if let Some((row, &v)) = slack.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)) {
            if v > eff {
                return Err(Error::InfeasiblePoint { row, violation: v });
            }
        }
        Ok((0..self.num_rows()).filter(|&i| slack[i] >= -eff).collect())
    }

    /// Euclidean projection `argmin ‖x − y‖²` over the set.
    pub fn project(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_dim(y)?;
        if self.num_rows() == 0 || (&self.gamma * y - &self.b).max() <= 0.0 {
            return Ok(y.clone());
        }
        let n = self.dim();
        let qp = QpProblem::new(DMatrix::identity(n, n), -y)
            .with_inequalities(self.gamma.clone(), self.b.clone());
        let sol = solve_qp(&qp, &QpSettings::default(), None)?.into_optimal()?;
        Ok(sol.x)
    }

    /// `n ∈ N_P(x)`, tested as `‖Π_P(x + n) − x‖∞ ≤ tol·(1 + ‖n‖∞)`.
    pub fn normal_cone_contains(
        &self,
        x: &DVector<f64>,
        n: &DVector<f64>,
        tol: f64,
    ) -> Result<bool> {
        let proj = self.project(&(x + n))?;
        Ok(linalg::inf_norm(&(proj - x)) <= tol * (1.0 + linalg::inf_norm(n)))
    }

    /// Active rows `i` whose removal keeps `n` in the normal cone at `x`.
    pub fn redundant_constraints(
        &self,
        x: &DVector<f64>,
        n: &DVector<f64>,
        tol: f64,
    ) -> Result<Vec<usize>> {
        let active = self.active_set(x, tol)?;
        self.warn_if_not_normal(&active, n, tol);
        self.redundant_among(&active, x, n, tol)
    }

    fn redundant_among(
        &self,
        active: &[usize],
        x: &DVector<f64>,
        n: &DVector<f64>,
        tol: f64,
    ) -> Result<Vec<usize>> {
        let mut redundant = Vec::new();
        for &i in active {
            if self.without_row(i).normal_cone_contains(x, n, tol)? {
                redundant.push(i);
            }
        }
        Ok(redundant)
    }

    /// Critical cone at `x` for the normal element `n`.
    pub fn critical_cone(&self, x: &DVector<f64>, n: &DVector<f64>, tol: f64) -> Result<ConeRep> {
        let active = self.active_set(x, tol)?;
        self.warn_if_not_normal(&active, n, tol);
        let ineq_rows = self.redundant_among(&active, x, n, tol)?;
        let eq_rows = active
            .iter()
            .copied()
            .filter(|i| !ineq_rows.contains(i))
            .collect();
        Ok(ConeRep {
            ineq_rows,
            eq_rows,
            ortho: n.clone(),
        })
    }

    /// Projection of `n` onto the normal cone `N_P(x)`, computed as
    /// `n − Π_{T_P(x)}(n)` with the tangent cone `{y | Γ_A y ≤ 0}`.
    pub fn project_onto_normal_cone(
        &self,
        x: &DVector<f64>,
        n: &DVector<f64>,
        tol: f64,
    ) -> Result<DVector<f64>> {
        let active = self.active_set(x, tol)?;
        if active.is_empty() {
            return Ok(DVector::zeros(n.len()));
        }
        let tangent = Polyhedron {
            gamma: linalg::select_rows(&self.gamma, &active),
            b: DVector::zeros(active.len()),
        };
        Ok(n - tangent.project(n)?)
    }

    fn warn_if_not_normal(&self, active: &[usize], n: &DVector<f64>, tol: f64) {
        let scale = 1.0 + linalg::inf_norm(n);
        let off_span = if active.is_empty() {
            linalg::inf_norm(n)
        } else {
            let rows = linalg::select_rows(&self.gamma, active);
            let qr = OrderedQr::new(&rows.transpose(), 1e-12);
            let mut t: Vec<f64> = n.iter().copied().collect();
            qr.apply_qt(&mut t);
            t[..qr.rank()].iter_mut().for_each(|v| *v = 0.0);
            t.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
        };
        if off_span > tol * scale {
            warn!(
                "normal element has a component of size {off_span:e} outside the span of the active rows; \
                 the reference point is likely inexact"
            );
        }
    }

    fn check_dim(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::Dimension(format!(
                "vector of length {} for a polyhedron in R^{}",
                x.len(),
                self.dim()
            )));
        }
        Ok(())
    }
}

/// A critical cone `{y | Γᵢy ≤ 0 (i ∈ ineq_rows), Γᵢy = 0 (i ∈ eq_rows), orthoᵀy = 0}`.
///
/// Row indices refer to the polyhedron the cone was built from.
#[derive(Debug, Clone, PartialEq)]
pub struct ConeRep {
    pub ineq_rows: Vec<usize>,
    pub eq_rows: Vec<usize>,
    pub ortho: DVector<f64>,
}

impl ConeRep {
    /// Membership test with absolute tolerance `tol` on every row.
    pub fn contains(&self, poly: &Polyhedron, y: &DVector<f64>, tol: f64) -> bool {
        let g = poly.gamma();
        let row_dot = |i: usize| {
            g.row(i)
                .iter()
                .zip(y.iter())
                .map(|(a, b)| a * b)
                .sum::<f64>()
        };
        self.ineq_rows.iter().all(|&i| row_dot(i) <= tol)
            && self.eq_rows.iter().all(|&i| row_dot(i).abs() <= tol)
            && self.ortho.dot(y).abs() <= tol
    }

    /// Active rows covered by the cone.
    pub fn active_rows(&self) -> Vec<usize> {
        let mut rows: Vec<usize> = self
            .ineq_rows
            .iter()
            .chain(&self.eq_rows)
            .copied()
            .collect();
        rows.sort_unstable();
        rows
    }
}
