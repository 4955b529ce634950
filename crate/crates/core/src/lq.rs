//! Linear dynamics with quadratic costs.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::ocp::{Ocp, OcpModel};
use crate::polyhedral::Polyhedron;

/// `f(x, u) = A x + B u`, `ℓ = ½xᵀQx + ½uᵀRu`, `φ = ½xᵀPx`.
#[derive(Debug, Clone)]
pub struct LinearQuadratic {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub p: DMatrix<f64>,
}

impl LinearQuadratic {
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        q: DMatrix<f64>,
        r: DMatrix<f64>,
        p: DMatrix<f64>,
    ) -> Self {
        let n = a.nrows();
        let m = b.ncols();
        assert_eq!(a.shape(), (n, n), "A must be square");
        assert_eq!(b.nrows(), n, "B must have n rows");
        assert_eq!(q.shape(), (n, n), "Q must be n x n");
        assert_eq!(r.shape(), (m, m), "R must be m x m");
        assert_eq!(p.shape(), (n, n), "P must be n x n");
        Self { a, b, q, r, p }
    }

    /// Scalar problem `x⁺ = x + u` with cost `½u² + ½x²` on every stage.
    pub fn scalar_example() -> Self {
        let one = DMatrix::from_element(1, 1, 1.0);
        Self::new(one.clone(), one.clone(), one.clone(), one.clone(), one)
    }

    /// Sampled double integrator with a unit-weight quadratic cost.
    pub fn double_integrator(ts: f64) -> Self {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, ts, 0.0, 1.0]);
        let b = DMatrix::from_row_slice(2, 1, &[0.5 * ts * ts, ts]);
        let q = DMatrix::identity(2, 2);
        let r = DMatrix::from_element(1, 1, 0.1);
        let p = DMatrix::identity(2, 2) * 10.0;
        Self::new(a, b, q, r, p)
    }

    pub fn into_ocp(
        self,
        horizon: usize,
        input_set: Polyhedron,
        stage_set: Polyhedron,
        terminal_set: Polyhedron,
    ) -> Result<Ocp> {
        Ocp::with_uniform_sets(Arc::new(self), horizon, input_set, stage_set, terminal_set)
    }
}

impl OcpModel for LinearQuadratic {
    fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    fn dynamics(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        &self.a * x + &self.b * u
    }

    fn dynamics_jacobians(
        &self,
        _x: &DVector<f64>,
        _u: &DVector<f64>,
    ) -> (DMatrix<f64>, DMatrix<f64>) {
        (self.a.clone(), self.b.clone())
    }

    fn dynamics_hessian(
        &self,
        _x: &DVector<f64>,
        _u: &DVector<f64>,
        _w: &DVector<f64>,
    ) -> DMatrix<f64> {
        let k = self.state_dim() + self.input_dim();
        DMatrix::zeros(k, k)
    }

    fn stage_cost(&self, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
        0.5 * (x.dot(&(&self.q * x)) + u.dot(&(&self.r * u)))
    }

    fn stage_cost_gradient(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let (n, m) = (self.state_dim(), self.input_dim());
        let mut g = DVector::zeros(n + m);
        g.rows_mut(0, n).copy_from(&(&self.q * x));
        g.rows_mut(n, m).copy_from(&(&self.r * u));
        g
    }

    fn stage_cost_hessian(&self, _x: &DVector<f64>, _u: &DVector<f64>) -> DMatrix<f64> {
        let (n, m) = (self.state_dim(), self.input_dim());
        let mut h = DMatrix::zeros(n + m, n + m);
        h.view_mut((0, 0), (n, n)).copy_from(&self.q);
        h.view_mut((n, n), (m, m)).copy_from(&self.r);
        h
    }

    fn terminal_cost(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.p * x))
    }

    fn terminal_cost_gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.p * x
    }

    fn terminal_cost_hessian(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        self.p.clone()
    }
}
