//! Quadrotor benchmark: 12-state rigid-body model, forward-Euler
//! discretization, quadratic tracking cost and box constraints.
//!
//! State `x = (p, v, θ, ω)`, input `u = (T, τ)`. The OCP is posed in deviation
//! coordinates `ũ = u − (mg, 0, 0, 0)` so the origin is the hover equilibrium.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::ocp::{Ocp, OcpModel};
use crate::polyhedral::Polyhedron;

pub const STATE_DIM: usize = 12;
pub const INPUT_DIM: usize = 4;

const GIMBAL_GUARD: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct UavParams {
    pub mass: f64,
    /// Principal moments of inertia.
    pub inertia: [f64; 3],
    pub gravity: f64,
    pub ts: f64,
    pub thrust_bounds: (f64, f64),
    pub torque_bound: f64,
    pub velocity_bound: f64,
    pub q_weights: [f64; STATE_DIM],
    pub r_weights: [f64; INPUT_DIM],
}

impl Default for UavParams {
    fn default() -> Self {
        Self {
            mass: 2.0,
            inertia: [0.82e-2, 0.82e-2, 1.62e-2],
            gravity: 9.81,
            ts: 0.075,
            thrust_bounds: (18.0, 22.0),
            torque_bound: 0.06,
            velocity_bound: 2.0,
            q_weights: [
                5.0, 5.0, 5.0, 10.0, 10.0, 10.0, 0.1, 0.1, 0.1, 1.0, 1.0, 1.0,
            ],
            r_weights: [0.1, 0.01, 0.01, 0.01],
        }
    }
}

impl UavParams {
    /// Hover input `(mg, 0, 0, 0)`.
    pub fn hover_input(&self) -> DVector<f64> {
        DVector::from_column_slice(&[self.mass * self.gravity, 0.0, 0.0, 0.0])
    }

    pub fn q_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_column_slice(&self.q_weights))
    }

    pub fn r_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_column_slice(&self.r_weights))
    }

    fn inertia_matrix(&self) -> Matrix3<f64> {
        Matrix3::from_diagonal(&Vector3::from(self.inertia))
    }

    fn inertia_inv(&self) -> Matrix3<f64> {
        Matrix3::from_diagonal(&Vector3::new(
            1.0 / self.inertia[0],
            1.0 / self.inertia[1],
            1.0 / self.inertia[2],
        ))
    }

    fn validate(&self) -> Result<()> {
        let positive = self.mass > 0.0 && self.inertia.iter().all(|&j| j > 0.0) && self.ts > 0.0;
        let intervals = self.thrust_bounds.0 <= self.thrust_bounds.1
            && self.torque_bound >= 0.0
            && self.velocity_bound >= 0.0;
        if positive && intervals {
            Ok(())
        } else {
            Err(Error::Dimension(format!(
                "invalid UAV parameters: {self:?}"
            )))
        }
    }
}

// Separable trigonometric products c·φ₁(θ₁)φ₂(θ₂)φ₃(θ₃), which is all the
// rotation and kinematic matrices need.

#[derive(Debug, Clone, Copy)]
enum Factor {
    One,
    Sin,
    Cos,
    Tan,
    Sec,
}

use Factor::{Cos, One, Sec, Sin, Tan};

impl Factor {
    /// Value, first and second derivative.
    fn eval(self, t: f64) -> [f64; 3] {
        match self {
            One => [1.0, 0.0, 0.0],
            Sin => [t.sin(), t.cos(), -t.sin()],
            Cos => [t.cos(), -t.sin(), -t.cos()],
            Tan => {
                let (ta, se) = (t.tan(), 1.0 / t.cos());
                [ta, se * se, 2.0 * se * se * ta]
            }
            Sec => {
                let (ta, se) = (t.tan(), 1.0 / t.cos());
                [se, se * ta, se * (ta * ta + se * se)]
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Term(f64, [Factor; 3]);

type Expr = &'static [Term];

/// Value, gradient and Hessian of a sum of terms.
fn eval_expr(expr: Expr, theta: &Vector3<f64>) -> (f64, Vector3<f64>, Matrix3<f64>) {
    let mut val = 0.0;
    let mut grad = Vector3::zeros();
    let mut hess = Matrix3::zeros();
    for Term(c, factors) in expr {
        let f: [[f64; 3]; 3] = std::array::from_fn(|k| factors[k].eval(theta[k]));
        // Product with derivative order `ord[k]` on axis k.
        let prod = |ord: [usize; 3]| c * f[0][ord[0]] * f[1][ord[1]] * f[2][ord[2]];
        let unit = |a: usize, o: usize| {
            let mut ord = [0; 3];
            ord[a] = o;
            ord
        };
        val += prod([0; 3]);
        for a in 0..3 {
            grad[a] += prod(unit(a, 1));
            hess[(a, a)] += prod(unit(a, 2));
            for b in a + 1..3 {
                let mut ord = unit(a, 1);
                ord[b] = 1;
                let v = prod(ord);
                hess[(a, b)] += v;
                hess[(b, a)] += v;
            }
        }
    }
    (val, grad, hess)
}

/// Third column of the ZYX body-to-world rotation (roll θ₁, pitch θ₂, yaw θ₃).
const THRUST_DIR: [Expr; 3] = [
    &[Term(1.0, [Cos, Sin, Cos]), Term(1.0, [Sin, One, Sin])],
    &[Term(1.0, [Cos, Sin, Sin]), Term(-1.0, [Sin, One, Cos])],
    &[Term(1.0, [Cos, Cos, One])],
];

/// Attitude kinematic matrix, row-major.
const KINEMATIC: [[Expr; 3]; 3] = [
    [
        &[Term(1.0, [One, One, One])],
        &[Term(1.0, [One, Tan, Sin])],
        &[Term(1.0, [One, Sin, Cos])],
    ],
    [
        &[],
        &[Term(1.0, [One, One, Cos])],
        &[Term(-1.0, [One, One, Sin])],
    ],
    [
        &[],
        &[Term(1.0, [One, Sec, Sin])],
        &[Term(1.0, [One, Sec, Cos])],
    ],
];

fn guard(theta: &Vector3<f64>) -> Result<()> {
    let c = theta[1].cos();
    if c.abs() < GIMBAL_GUARD {
        Err(Error::GimbalLock { cos_pitch: c.abs() })
    } else {
        Ok(())
    }
}

/// Kinematic matrix mapping body rates to Euler-angle rates.
pub fn attitude_matrix(theta: &Vector3<f64>) -> Result<Matrix3<f64>> {
    guard(theta)?;
    Ok(Matrix3::from_fn(|i, j| eval_expr(KINEMATIC[i][j], theta).0))
}

/// Body-to-world rotation applied to `e₃` (the thrust direction).
pub fn thrust_direction(theta: &Vector3<f64>) -> Vector3<f64> {
    Vector3::from_fn(|i, _| eval_expr(THRUST_DIR[i], theta).0)
}

fn split(x: &DVector<f64>) -> (Vector3<f64>, Vector3<f64>, Vector3<f64>) {
    (
        Vector3::new(x[3], x[4], x[5]),
        Vector3::new(x[6], x[7], x[8]),
        Vector3::new(x[9], x[10], x[11]),
    )
}

fn continuous_unchecked(params: &UavParams, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
    let (v, theta, omega) = split(x);
    let thrust = u[0];
    let tau = Vector3::new(u[1], u[2], u[3]);
    let j = params.inertia_matrix();
    let acc = thrust_direction(&theta) * (thrust / params.mass) - Vector3::z() * params.gravity;
    let k = Matrix3::from_fn(|i, jj| eval_expr(KINEMATIC[i][jj], &theta).0);
    let theta_dot = k * omega;
    let omega_dot = params.inertia_inv() * (tau - omega.cross(&(j * omega)));
    let mut out = DVector::zeros(STATE_DIM);
    out.rows_mut(0, 3).copy_from(&v);
    out.rows_mut(3, 3).copy_from(&acc);
    out.rows_mut(6, 3).copy_from(&theta_dot);
    out.rows_mut(9, 3).copy_from(&omega_dot);
    out
}

/// `ẋ` for absolute inputs `u = (T, τ)`.
pub fn continuous_dynamics(
    params: &UavParams,
    x: &DVector<f64>,
    u: &DVector<f64>,
) -> Result<DVector<f64>> {
    check_dims(x, u)?;
    let (_, theta, _) = split(x);
    guard(&theta)?;
    Ok(continuous_unchecked(params, x, u))
}

/// `x + Ts·ẋ` for absolute inputs.
pub fn discrete_dynamics(
    params: &UavParams,
    x: &DVector<f64>,
    u: &DVector<f64>,
) -> Result<DVector<f64>> {
    Ok(x + continuous_dynamics(params, x, u)? * params.ts)
}

fn check_dims(x: &DVector<f64>, u: &DVector<f64>) -> Result<()> {
    if x.len() != STATE_DIM || u.len() != INPUT_DIM {
        return Err(Error::Dimension(format!(
            "UAV expects x in R^{STATE_DIM} and u in R^{INPUT_DIM}, got {} and {}",
            x.len(),
            u.len()
        )));
    }
    Ok(())
}

fn skew(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -w[2], w[1], w[2], 0.0, -w[0], -w[1], w[0], 0.0)
}

/// Forward-Euler UAV model in deviation-input coordinates with the
/// quadratic cost. Usable directly as an [`OcpModel`].
#[derive(Debug, Clone)]
pub struct UavModel {
    params: UavParams,
    hover: DVector<f64>,
    q: DMatrix<f64>,
    r: DMatrix<f64>,
    p: DMatrix<f64>,
}

impl UavModel {
    /// Model with the LQR terminal weight computed from the hover linearization.
    pub fn new(params: UavParams) -> Result<Self> {
        params.validate()?;
        let hover = params.hover_input();
        let q = params.q_matrix();
        let r = params.r_matrix();
        let mut model = Self {
            p: DMatrix::zeros(STATE_DIM, STATE_DIM),
            params,
            hover,
            q,
            r,
        };
        let (a, b) =
            model.dynamics_jacobians(&DVector::zeros(STATE_DIM), &DVector::zeros(INPUT_DIM));
        model.p = lqr_terminal(&a, &b, &model.q, &model.r)?;
        Ok(model)
    }

    pub fn params(&self) -> &UavParams {
        &self.params
    }

    pub fn terminal_weight(&self) -> &DMatrix<f64> {
        &self.p
    }

    /// Absolute input from a deviation input.
    pub fn absolute_input(&self, du: &DVector<f64>) -> DVector<f64> {
        du + &self.hover
    }
}

impl OcpModel for UavModel {
    fn state_dim(&self) -> usize {
        STATE_DIM
    }

    fn input_dim(&self) -> usize {
        INPUT_DIM
    }

    fn dynamics(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let ua = u + &self.hover;
        x + continuous_unchecked(&self.params, x, &ua) * self.params.ts
    }

    fn dynamics_jacobians(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
    ) -> (DMatrix<f64>, DMatrix<f64>) {
        let prm = &self.params;
        let ts = prm.ts;
        let (_, theta, omega) = split(x);
        let thrust = u[0] + self.hover[0];
        let j = prm.inertia_matrix();
        let jinv = prm.inertia_inv();

        let mut ac = DMatrix::<f64>::zeros(STATE_DIM, STATE_DIM);
        let mut bc = DMatrix::<f64>::zeros(STATE_DIM, INPUT_DIM);
        for i in 0..3 {
            ac[(i, 3 + i)] = 1.0;
        }
        for i in 0..3 {
            let (r, dr, _) = eval_expr(THRUST_DIR[i], &theta);
            for k in 0..3 {
                ac[(3 + i, 6 + k)] = thrust / prm.mass * dr[k];
            }
            bc[(3 + i, 0)] = r / prm.mass;
        }
        for i in 0..3 {
            for jj in 0..3 {
                let (kij, dk, _) = eval_expr(KINEMATIC[i][jj], &theta);
                ac[(6 + i, 9 + jj)] = kij;
                for k in 0..3 {
                    ac[(6 + i, 6 + k)] += dk[k] * omega[jj];
                }
            }
        }
        let domega = -jinv * (skew(&omega) * j - skew(&(j * omega)));
        ac.view_mut((9, 9), (3, 3)).copy_from(&domega);
        bc.view_mut((9, 1), (3, 3)).copy_from(&jinv);

        let a = DMatrix::identity(STATE_DIM, STATE_DIM) + ac * ts;
        (a, bc * ts)
    }

    fn dynamics_hessian(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        w: &DVector<f64>,
    ) -> DMatrix<f64> {
        let prm = &self.params;
        let (_, theta, omega) = split(x);
        let thrust = u[0] + self.hover[0];
        let nz = STATE_DIM + INPUT_DIM;
        let mut h = DMatrix::<f64>::zeros(nz, nz);
        const TH: usize = 6;
        const OM: usize = 9;
        const T: usize = STATE_DIM;

        // Translational channel: w_vᵀ (T/m) r(θ).
        for i in 0..3 {
            let wi = w[3 + i];
            if wi == 0.0 {
                continue;
            }
            let (_, dr, d2r) = eval_expr(THRUST_DIR[i], &theta);
            for a in 0..3 {
                for b in 0..3 {
                    h[(TH + a, TH + b)] += wi * thrust / prm.mass * d2r[(a, b)];
                }
                let c = wi / prm.mass * dr[a];
                h[(TH + a, T)] += c;
                h[(T, TH + a)] += c;
            }
        }
        // Kinematics: w_θᵀ K(θ) ω.
        for i in 0..3 {
            let wi = w[6 + i];
            if wi == 0.0 {
                continue;
            }
            for jj in 0..3 {
                let (_, dk, d2k) = eval_expr(KINEMATIC[i][jj], &theta);
                for a in 0..3 {
                    for b in 0..3 {
                        h[(TH + a, TH + b)] += wi * omega[jj] * d2k[(a, b)];
                    }
                    h[(TH + a, OM + jj)] += wi * dk[a];
                    h[(OM + jj, TH + a)] += wi * dk[a];
                }
            }
        }
        // Gyroscopic term: −(J⁻¹w_ω)ᵀ(ω × Jω).
        let wt = prm.inertia_inv() * Vector3::new(w[9], w[10], w[11]);
        let j = prm.inertia_matrix();
        let gyro = skew(&wt) * j - j * skew(&wt);
        let mut view = h.view_mut((OM, OM), (3, 3));
        view += gyro;

        h * prm.ts
    }

    fn stage_cost(&self, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
        0.5 * (x.dot(&(&self.q * x)) + u.dot(&(&self.r * u)))
    }

    fn stage_cost_gradient(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let mut g = DVector::zeros(STATE_DIM + INPUT_DIM);
        g.rows_mut(0, STATE_DIM).copy_from(&(&self.q * x));
        g.rows_mut(STATE_DIM, INPUT_DIM).copy_from(&(&self.r * u));
        g
    }

    fn stage_cost_hessian(&self, _x: &DVector<f64>, _u: &DVector<f64>) -> DMatrix<f64> {
        let mut h = DMatrix::zeros(STATE_DIM + INPUT_DIM, STATE_DIM + INPUT_DIM);
        h.view_mut((0, 0), (STATE_DIM, STATE_DIM))
            .copy_from(&self.q);
        h.view_mut((STATE_DIM, STATE_DIM), (INPUT_DIM, INPUT_DIM))
            .copy_from(&self.r);
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

/// Fixed point of `P ← Q + AᵀPA − AᵀPB(R + BᵀPB)⁻¹BᵀPA`, iterated from `Q`
/// until `‖ΔP‖∞ ≤ 1e−10`.
pub fn lqr_terminal(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    const MAX_ITER: usize = 100_000;
    let mut p = q.clone();
    for _ in 0..MAX_ITER {
        let pb = &p * b;
        let s = r + b.transpose() * &pb;
        let chol = s
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Dimension("R + BᵀPB is not positive definite".into()))?;
        let k = chol.solve(&(pb.transpose() * a));
        let next = q + a.transpose() * &p * a - a.transpose() * &pb * k;
        let next = (&next + next.transpose()) * 0.5;
        let delta = (&next - &p).amax();
        p = next;
        if !delta.is_finite() {
            break;
        }
        if delta <= 1e-10 {
            return Ok(p);
        }
    }
    Err(Error::RiccatiDiverged {
        iterations: MAX_ITER,
    })
}

/// Constraint sets `(U₀, Z, X_N)` in deviation coordinates.
pub fn uav_sets(params: &UavParams) -> Result<(Polyhedron, Polyhedron, Polyhedron)> {
    let inf = f64::INFINITY;
    let mg = params.mass * params.gravity;
    let (tlo, thi) = params.thrust_bounds;
    let tb = params.torque_bound;
    let vb = params.velocity_bound;
    let u_lo = [tlo - mg, -tb, -tb, -tb];
    let u_hi = [thi - mg, tb, tb, tb];
    let input_set = Polyhedron::from_box(&u_lo, &u_hi)?;

    let mut x_lo = [-inf; STATE_DIM];
    let mut x_hi = [inf; STATE_DIM];
    for k in 3..6 {
        x_lo[k] = -vb;
        x_hi[k] = vb;
    }
    let z_lo: Vec<f64> = x_lo.iter().chain(&u_lo).copied().collect();
    let z_hi: Vec<f64> = x_hi.iter().chain(&u_hi).copied().collect();
    let stage_set = Polyhedron::from_box(&z_lo, &z_hi)?;
    let terminal_set = Polyhedron::from_box(&x_lo, &x_hi)?;
    Ok((input_set, stage_set, terminal_set))
}

/// The benchmark OCP with horizon `N ≥ 2`.
pub fn build_uav_ocp(params: &UavParams, horizon: usize) -> Result<Ocp> {
    if horizon < 2 {
        return Err(Error::Dimension(format!(
            "UAV horizon must be at least 2, got {horizon}"
        )));
    }
    let model = Arc::new(UavModel::new(params.clone())?);
    let (u0, z, xn) = uav_sets(params)?;
    Ocp::with_uniform_sets(model, horizon, u0, z, xn)
}

/// Row of the thrust lower bound inside `U₀` and inside each `Zᵢ`.
pub const THRUST_LOWER_ROW_U0: usize = 1;
pub const THRUST_LOWER_ROW_Z: usize = 7;

/// Benchmark OCP whose thrust lower bound appears twice in every stage set,
/// so LICQ fails whenever that bound is active.
pub fn build_uav_ocp_duplicated_thrust(params: &UavParams, horizon: usize) -> Result<Ocp> {
    if horizon < 2 {
        return Err(Error::Dimension(format!(
            "UAV horizon must be at least 2, got {horizon}"
        )));
    }
    let model = Arc::new(UavModel::new(params.clone())?);
    let (u0, z, xn) = uav_sets(params)?;
    Ocp::with_uniform_sets(
        model,
        horizon,
        u0.with_duplicated_row(THRUST_LOWER_ROW_U0),
        z.with_duplicated_row(THRUST_LOWER_ROW_Z),
        xn,
    )
}
