//! Discrete-time optimal control problems parameterized by the initial state,
//! written as the stacked NLP
//!
//! ```text
//! minimize J(v)  subject to  g(p, v) = 0,  v ∈ V
//! ```
//!
//! with `v = (u₀, x₁, u₁, …, u_{N−1}, x_N)`, dynamics residuals
//! `g = (x₁ − f(p, u₀), …, x_N − f(x_{N−1}, u_{N−1}))` and
//! `V = U₀ × Z₁ × … × Z_{N−1} × X_N`. The Lagrangian is `L = J + qᵀg`.

use std::ops::Range;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::polyhedral::Polyhedron;

/// Dynamics and cost callbacks with analytic derivatives.
///
/// Stage quantities are taken over the stacked point `(x, u) ∈ ℝⁿ⁺ᵐ`.
pub trait OcpModel: Send + Sync {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;

    fn dynamics(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64>;
    /// `(∇ₓf, ∇ᵤf)`, of sizes n×n and n×m.
    fn dynamics_jacobians(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
    ) -> (DMatrix<f64>, DMatrix<f64>);
    /// `Σₖ wₖ ∇²fₖ(x, u)` over `(x, u)`.
    fn dynamics_hessian(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        w: &DVector<f64>,
    ) -> DMatrix<f64>;

    fn stage_cost(&self, x: &DVector<f64>, u: &DVector<f64>) -> f64;
    fn stage_cost_gradient(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64>;
    fn stage_cost_hessian(&self, x: &DVector<f64>, u: &DVector<f64>) -> DMatrix<f64>;

    fn terminal_cost(&self, x: &DVector<f64>) -> f64;
    fn terminal_cost_gradient(&self, x: &DVector<f64>) -> DVector<f64>;
    fn terminal_cost_hessian(&self, x: &DVector<f64>) -> DMatrix<f64>;
}

/// Primal-dual point `z = (v, q)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PrimalDual {
    pub v: DVector<f64>,
    pub q: DVector<f64>,
}

impl PrimalDual {
    pub fn new(v: DVector<f64>, q: DVector<f64>) -> Self {
        Self { v, q }
    }

    pub fn zeros(ocp: &Ocp) -> Self {
        Self {
            v: DVector::zeros(ocp.num_primal()),
            q: DVector::zeros(ocp.num_costates()),
        }
    }

    pub fn stacked(&self) -> DVector<f64> {
        let mut z = DVector::zeros(self.v.len() + self.q.len());
        z.rows_mut(0, self.v.len()).copy_from(&self.v);
        z.rows_mut(self.v.len(), self.q.len()).copy_from(&self.q);
        z
    }

    pub fn add(&self, dv: &DVector<f64>, dq: &DVector<f64>) -> Self {
        Self {
            v: &self.v + dv,
            q: &self.q + dq,
        }
    }

    /// Euclidean distance between two points.
    pub fn distance(&self, other: &PrimalDual) -> f64 {
        ((&self.v - &other.v).norm_squared() + (&self.q - &other.q).norm_squared()).sqrt()
    }
}

/// Derivative information of the stacked NLP at a primal-dual point.
#[derive(Debug, Clone)]
pub struct KktData {
    /// `∇²_v L` (j×j).
    pub r: DMatrix<f64>,
    /// `∇_v g` (d×j).
    pub g: DMatrix<f64>,
    /// `∇_{pv} L` (j×n); nonzero only in the `u₀` rows.
    pub pmat: DMatrix<f64>,
    /// `∇_p g` (d×n); nonzero only in the first `n` rows.
    pub qmat: DMatrix<f64>,
    /// `∇_v L` (j).
    pub grad_l: DVector<f64>,
    /// `g(p, v)` (d).
    pub gval: DVector<f64>,
}

#[derive(Clone)]
pub struct Ocp {
    horizon: usize,
    model: Arc<dyn OcpModel>,
    input_set: Polyhedron,
    stage_sets: Vec<Polyhedron>,
    terminal_set: Polyhedron,
}

impl std::fmt::Debug for Ocp {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Ocp")
            .field("horizon", &self.horizon)
            .field("n", &self.n())
            .field("m", &self.m())
            .finish_non_exhaustive()
    }
}

impl Ocp {
    /// `stage_sets` holds `Z₁ … Z_{N−1}` over `(xᵢ, uᵢ)`.
    pub fn new(
        model: Arc<dyn OcpModel>,
        horizon: usize,
        input_set: Polyhedron,
        stage_sets: Vec<Polyhedron>,
        terminal_set: Polyhedron,
    ) -> Result<Self> {
        let (n, m) = (model.state_dim(), model.input_dim());
        if horizon == 0 {
            return Err(Error::Dimension("horizon must be at least 1".into()));
        }
        if stage_sets.len() != horizon - 1 {
            return Err(Error::Dimension(format!(
                "expected {} stage sets, got {}",
                horizon - 1,
                stage_sets.len()
            )));
        }
        if input_set.dim() != m {
            return Err(Error::Dimension(format!(
                "U0 lives in R^{} not R^{m}",
                input_set.dim()
            )));
        }
        if let Some((i, z)) = stage_sets
            .iter()
            .enumerate()
            .find(|(_, z)| z.dim() != n + m)
        {
            return Err(Error::Dimension(format!(
                "Z{} lives in R^{} not R^{}",
                i + 1,
                z.dim(),
                n + m
            )));
        }
        if terminal_set.dim() != n {
            return Err(Error::Dimension(format!(
                "X_N lives in R^{} not R^{n}",
                terminal_set.dim()
            )));
        }
        Ok(Self {
            horizon,
            model,
            input_set,
            stage_sets,
            terminal_set,
        })
    }

    /// Same `Z` at every intermediate stage.
    pub fn with_uniform_sets(
        model: Arc<dyn OcpModel>,
        horizon: usize,
        input_set: Polyhedron,
        stage_set: Polyhedron,
        terminal_set: Polyhedron,
    ) -> Result<Self> {
        let stages = vec![stage_set; horizon.saturating_sub(1)];
        Self::new(model, horizon, input_set, stages, terminal_set)
    }

    pub fn model(&self) -> &dyn OcpModel {
        self.model.as_ref()
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn n(&self) -> usize {
        self.model.state_dim()
    }

    pub fn m(&self) -> usize {
        self.model.input_dim()
    }

    /// `j = N(m + n)`.
    pub fn num_primal(&self) -> usize {
        self.horizon * (self.n() + self.m())
    }

    /// `d = N n`.
    pub fn num_costates(&self) -> usize {
        self.horizon * self.n()
    }

    pub fn input_set(&self) -> &Polyhedron {
        &self.input_set
    }

    pub fn stage_sets(&self) -> &[Polyhedron] {
        &self.stage_sets
    }

    pub fn terminal_set(&self) -> &Polyhedron {
        &self.terminal_set
    }

    /// Position of `uᵢ` inside `v`, `i ∈ 0..N`.
    pub fn u_range(&self, i: usize) -> Range<usize> {
        let (n, m) = (self.n(), self.m());
        let start = if i == 0 { 0 } else { m + (i - 1) * (n + m) + n };
        start..start + m
    }

    /// Position of `xᵢ` inside `v`, `i ∈ 1..=N`.
    pub fn x_range(&self, i: usize) -> Range<usize> {
        debug_assert!(i >= 1 && i <= self.horizon);
        let (n, m) = (self.n(), self.m());
        let start = m + (i - 1) * (n + m);
        start..start + n
    }

    /// Position of the `k`-th dynamics residual inside `g` (and of `q_{k+1}` inside `q`).
    pub fn g_range(&self, k: usize) -> Range<usize> {
        let n = self.n();
        k * n..(k + 1) * n
    }

    /// The factors of `V` with the slice of `v` each one constrains, in order
    /// `U₀, Z₁, …, Z_{N−1}, X_N`.
    pub fn constraint_blocks(&self) -> Vec<(Range<usize>, &Polyhedron)> {
        let mut blocks = Vec::with_capacity(self.horizon + 1);
        blocks.push((self.u_range(0), &self.input_set));
        for (i, z) in self.stage_sets.iter().enumerate() {
            let start = self.x_range(i + 1).start;
            blocks.push((start..start + self.n() + self.m(), z));
        }
        blocks.push((self.x_range(self.horizon), &self.terminal_set));
        blocks
    }

    /// Row offsets of each block of [`Ocp::constraint_blocks`] inside the stacked `M`.
    pub fn constraint_row_offsets(&self) -> Vec<usize> {
        let mut offsets = Vec::with_capacity(self.horizon + 1);
        let mut acc = 0;
        for (_, poly) in self.constraint_blocks() {
            offsets.push(acc);
            acc += poly.num_rows();
        }
        offsets
    }

    /// `V = {v | Mv ≤ h}` with block-diagonal `M`.
    pub fn stack_constraints(&self) -> Polyhedron {
        let blocks = self.constraint_blocks();
        let rows: usize = blocks.iter().map(|(_, p)| p.num_rows()).sum();
        let mut m = DMatrix::zeros(rows, self.num_primal());
        let mut h = DVector::zeros(rows);
        let mut r = 0;
        for (range, poly) in blocks {
            let l = poly.num_rows();
            if l > 0 {
                m.view_mut((r, range.start), (l, range.len()))
                    .copy_from(poly.gamma());
                h.rows_mut(r, l).copy_from(poly.b());
            }
            r += l;
        }
        Polyhedron::new(m, h).expect("stacked dimensions agree by construction")
    }

    fn check_point(&self, p: &DVector<f64>, v: &DVector<f64>) -> Result<()> {
        if p.len() != self.n() || v.len() != self.num_primal() {
            return Err(Error::Dimension(format!(
                "p has length {} (expected {}), v has length {} (expected {})",
                p.len(),
                self.n(),
                v.len(),
                self.num_primal()
            )));
        }
        Ok(())
    }

    fn check_z(&self, p: &DVector<f64>, z: &PrimalDual) -> Result<()> {
        self.check_point(p, &z.v)?;
        if z.q.len() != self.num_costates() {
            return Err(Error::Dimension(format!(
                "q has length {} (expected {})",
                z.q.len(),
                self.num_costates()
            )));
        }
        Ok(())
    }

    /// State entering stage `i`: `p` for `i = 0`, otherwise `xᵢ`.
    pub fn stage_state(&self, p: &DVector<f64>, v: &DVector<f64>, i: usize) -> DVector<f64> {
        if i == 0 {
            p.clone()
        } else {
            v.rows_range(self.x_range(i)).into_owned()
        }
    }

    pub fn input(&self, v: &DVector<f64>, i: usize) -> DVector<f64> {
        v.rows_range(self.u_range(i)).into_owned()
    }

    /// Simulate the dynamics from `p` under `inputs` and stack the result.
    pub fn rollout(&self, p: &DVector<f64>, inputs: &[DVector<f64>]) -> Result<DVector<f64>> {
        if inputs.len() != self.horizon
            || inputs.iter().any(|u| u.len() != self.m())
            || p.len() != self.n()
        {
            return Err(Error::Dimension(
                "rollout needs N inputs of length m".into(),
            ));
        }
        let mut v = DVector::zeros(self.num_primal());
        let mut x = p.clone();
        for (i, u) in inputs.iter().enumerate() {
            v.rows_range_mut(self.u_range(i)).copy_from(u);
            x = self.model.dynamics(&x, u);
            v.rows_range_mut(self.x_range(i + 1)).copy_from(&x);
        }
        Ok(v)
    }

    /// Dynamics residuals `g(p, v)`.
    pub fn eval_g(&self, p: &DVector<f64>, v: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_point(p, v)?;
        let mut g = DVector::zeros(self.num_costates());
        for k in 0..self.horizon {
            let x = self.stage_state(p, v, k);
            let u = self.input(v, k);
            let next = v.rows_range(self.x_range(k + 1));
            g.rows_range_mut(self.g_range(k))
                .copy_from(&(next - self.model.dynamics(&x, &u)));
        }
        Ok(g)
    }

    /// `J(v)`; the first stage cost is evaluated at `x₀ = p`.
    pub fn cost(&self, p: &DVector<f64>, v: &DVector<f64>) -> Result<f64> {
        self.check_point(p, v)?;
        let mut j = 0.0;
        for i in 0..self.horizon {
            j += self
                .model
                .stage_cost(&self.stage_state(p, v, i), &self.input(v, i));
        }
        j += self
            .model
            .terminal_cost(&v.rows_range(self.x_range(self.horizon)).into_owned());
        Ok(j)
    }

    fn cost_gradient(&self, p: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        let (n, m) = (self.n(), self.m());
        let mut grad = DVector::zeros(self.num_primal());
        for i in 0..self.horizon {
            let gl = self
                .model
                .stage_cost_gradient(&self.stage_state(p, v, i), &self.input(v, i));
            if i == 0 {
                grad.rows_range_mut(self.u_range(0))
                    .copy_from(&gl.rows(n, m));
            } else {
                let start = self.x_range(i).start;
                let mut blk = grad.rows_mut(start, n + m);
                blk += &gl;
            }
        }
        let xn = v.rows_range(self.x_range(self.horizon)).into_owned();
        let mut blk = grad.rows_range_mut(self.x_range(self.horizon));
        blk += self.model.terminal_cost_gradient(&xn);
        grad
    }

    /// `∇_v g` only (cheaper than the full [`Ocp::eval_kkt_data`]).
    pub fn constraint_jacobian(&self, p: &DVector<f64>, v: &DVector<f64>) -> DMatrix<f64> {
        let (n, m) = (self.n(), self.m());
        let mut g = DMatrix::zeros(self.num_costates(), self.num_primal());
        for k in 0..self.horizon {
            let rows = self.g_range(k);
            let x = self.stage_state(p, v, k);
            let u = self.input(v, k);
            let (a, b) = self.model.dynamics_jacobians(&x, &u);
            g.view_mut((rows.start, self.x_range(k + 1).start), (n, n))
                .copy_from(&DMatrix::identity(n, n));
            g.view_mut((rows.start, self.u_range(k).start), (n, m))
                .copy_from(&-b);
            if k > 0 {
                g.view_mut((rows.start, self.x_range(k).start), (n, n))
                    .copy_from(&-a);
            }
        }
        g
    }

    /// `F(p, z) = (∇_v L, g)`.
    #[allow(non_snake_case)]
    pub fn eval_F(&self, p: &DVector<f64>, z: &PrimalDual) -> Result<DVector<f64>> {
        self.check_z(p, z)?;
        let grad_l =
            self.cost_gradient(p, &z.v) + self.constraint_jacobian(p, &z.v).transpose() * &z.q;
        let g = self.eval_g(p, &z.v)?;
        Ok(PrimalDual::new(grad_l, g).stacked())
    }

    /// `R`, `G`, `P`, `Q`, `∇_v L` and `g` at `(p, z)`.
    pub fn eval_kkt_data(&self, p: &DVector<f64>, z: &PrimalDual) -> Result<KktData> {
        self.check_z(p, z)?;
        let (n, m) = (self.n(), self.m());
        let (j, d) = (self.num_primal(), self.num_costates());
        let v = &z.v;

        let g = self.constraint_jacobian(p, v);
        let grad_l = self.cost_gradient(p, v) + g.transpose() * &z.q;
        let gval = self.eval_g(p, v)?;

        let mut r = DMatrix::zeros(j, j);
        let mut pmat = DMatrix::zeros(j, n);
        let mut qmat = DMatrix::zeros(d, n);
        for i in 0..self.horizon {
            let x = self.stage_state(p, v, i);
            let u = self.input(v, i);
            let w = z.q.rows_range(self.g_range(i)).into_owned();
            let blk =
                self.model.stage_cost_hessian(&x, &u) - self.model.dynamics_hessian(&x, &u, &w);
            if i == 0 {
                let u0 = self.u_range(0);
                r.view_mut((u0.start, u0.start), (m, m))
                    .copy_from(&blk.view((n, n), (m, m)));
                pmat.view_mut((u0.start, 0), (m, n))
                    .copy_from(&blk.view((n, 0), (m, n)));
                let (a0, _) = self.model.dynamics_jacobians(&x, &u);
                qmat.view_mut((0, 0), (n, n)).copy_from(&-a0);
            } else {
                let start = self.x_range(i).start;
                let mut view = r.view_mut((start, start), (n + m, n + m));
                view += &blk;
            }
        }
        let xn_range = self.x_range(self.horizon);
        let xn = v.rows_range(xn_range.clone()).into_owned();
        let mut view = r.view_mut((xn_range.start, xn_range.start), (n, n));
        view += self.model.terminal_cost_hessian(&xn);

        Ok(KktData {
            r,
            g,
            pmat,
            qmat,
            grad_l,
            gval,
        })
    }

    /// Central-difference validation of every analytic derivative.
    pub fn check_derivatives(
        &self,
        p: &DVector<f64>,
        z: &PrimalDual,
        h: f64,
    ) -> Result<DerivativeReport> {
        assert!(h > 0.0, "finite-difference step must be positive");
        self.check_z(p, z)?;
        let (n, m) = (self.n(), self.m());
        let model = self.model.as_ref();
        let mut report = DerivativeReport::default();

        let mut jac_err = 0.0_f64;
        let mut hess_err = 0.0_f64;
        let mut sgrad_err = 0.0_f64;
        let mut shess_err = 0.0_f64;
        for i in 0..self.horizon {
            let x = self.stage_state(p, &z.v, i);
            let u = self.input(&z.v, i);
            let zu = concat(&x, &u);
            let split = |s: &DVector<f64>| (s.rows(0, n).into_owned(), s.rows(n, m).into_owned());

            let (a, b) = model.dynamics_jacobians(&x, &u);
            let mut jac = DMatrix::zeros(n, n + m);
            jac.view_mut((0, 0), (n, n)).copy_from(&a);
            jac.view_mut((0, n), (n, m)).copy_from(&b);
            let fd_jac = fd_jacobian(&zu, h, |s| {
                let (xs, us) = split(s);
                model.dynamics(&xs, &us)
            });
            jac_err = jac_err.max(rel_err(&jac, &fd_jac));

            let mut w = DVector::from_fn(n, |k, _| 1.0 + k as f64 / n as f64);
            w += z.q.rows_range(self.g_range(i));
            let hess = model.dynamics_hessian(&x, &u, &w);
            let fd_hess = fd_jacobian(&zu, h, |s| {
                let (xs, us) = split(s);
                let (a, b) = model.dynamics_jacobians(&xs, &us);
                concat(&(a.transpose() * &w), &(b.transpose() * &w))
            });
            hess_err = hess_err.max(rel_err(&hess, &fd_hess));

            let grad = model.stage_cost_gradient(&x, &u);
            let fd_grad = fd_jacobian(&zu, h, |s| {
                let (xs, us) = split(s);
                DVector::from_element(1, model.stage_cost(&xs, &us))
            });
            sgrad_err = sgrad_err.max(rel_err(
                &DMatrix::from_column_slice(1, n + m, grad.as_slice()),
                &fd_grad,
            ));

            let shess = model.stage_cost_hessian(&x, &u);
            let fd_shess = fd_jacobian(&zu, h, |s| {
                let (xs, us) = split(s);
                model.stage_cost_gradient(&xs, &us)
            });
            shess_err = shess_err.max(rel_err(&shess, &fd_shess));
        }
        report.push("dynamics_jacobian", jac_err);
        report.push("dynamics_hessian", hess_err);
        report.push("stage_gradient", sgrad_err);
        report.push("stage_hessian", shess_err);

        let xn = z.v.rows_range(self.x_range(self.horizon)).into_owned();
        let tgrad = model.terminal_cost_gradient(&xn);
        let fd_tgrad = fd_jacobian(&xn, h, |s| DVector::from_element(1, model.terminal_cost(s)));
        report.push(
            "terminal_gradient",
            rel_err(
                &DMatrix::from_column_slice(1, n, tgrad.as_slice()),
                &fd_tgrad,
            ),
        );
        let fd_thess = fd_jacobian(&xn, h, |s| model.terminal_cost_gradient(s));
        report.push(
            "terminal_hessian",
            rel_err(&model.terminal_cost_hessian(&xn), &fd_thess),
        );

        // Stacked matrices against differences of F.
        let kkt = self.eval_kkt_data(p, z)?;
        let j = self.num_primal();
        let grad_l_at = |pp: &DVector<f64>, vv: &DVector<f64>| {
            self.cost_gradient(pp, vv) + self.constraint_jacobian(pp, vv).transpose() * &z.q
        };
        let fd_r = fd_jacobian(&z.v, h, |vv| grad_l_at(p, vv));
        let fd_g = fd_jacobian(&z.v, h, |vv| {
            self.eval_g(p, vv).expect("dimensions checked")
        });
        let fd_p = fd_jacobian(p, h, |pp| grad_l_at(pp, &z.v));
        let fd_q = fd_jacobian(p, h, |pp| {
            self.eval_g(pp, &z.v).expect("dimensions checked")
        });
        debug_assert_eq!(fd_r.ncols(), j);
        report.push("R", rel_err(&kkt.r, &fd_r));
        report.push("G", rel_err(&kkt.g, &fd_g));
        report.push("P", rel_err(&kkt.pmat, &fd_p));
        report.push("Q", rel_err(&kkt.qmat, &fd_q));
        Ok(report)
    }
}

/// Maximum relative error per derivative block.
#[derive(Debug, Clone, Default)]
pub struct DerivativeReport {
    pub entries: Vec<(String, f64)>,
}

impl DerivativeReport {
    fn push(&mut self, name: &str, err: f64) {
        self.entries.push((name.to_string(), err));
    }

    pub fn max_error(&self) -> f64 {
        self.entries.iter().map(|(_, e)| *e).fold(0.0, f64::max)
    }

    pub fn error(&self, name: &str) -> Option<f64> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, e)| *e)
    }

    /// Names of the blocks whose error exceeds `tol`.
    pub fn failing(&self, tol: f64) -> Vec<&str> {
        self.entries
            .iter()
            .filter(|(_, e)| !(*e <= tol))
            .map(|(n, _)| n.as_str())
            .collect()
    }
}

fn concat(a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(a.len() + b.len());
    out.rows_mut(0, a.len()).copy_from(a);
    out.rows_mut(a.len(), b.len()).copy_from(b);
    out
}

fn fd_jacobian(
    x: &DVector<f64>,
    h: f64,
    f: impl Fn(&DVector<f64>) -> DVector<f64>,
) -> DMatrix<f64> {
    let f0 = f(x);
    let mut jac = DMatrix::zeros(f0.len(), x.len());
    let mut xp = x.clone();
    for c in 0..x.len() {
        let orig = xp[c];
        xp[c] = orig + h;
        let fp = f(&xp);
        xp[c] = orig - h;
        let fm = f(&xp);
        xp[c] = orig;
        jac.set_column(c, &((fp - fm) / (2.0 * h)));
    }
    jac
}

fn rel_err(analytic: &DMatrix<f64>, reference: &DMatrix<f64>) -> f64 {
    if analytic.is_empty() {
        return 0.0;
    }
    (analytic - reference).amax() / reference.amax().max(1.0)
}
