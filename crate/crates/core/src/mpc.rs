//! Predictor-corrector MPC and the closed-loop simulation harness.

use std::time::Instant;

use nalgebra::DVector;

use crate::corrector::{correct, CorrectorConfig, CorrectorReport};
use crate::error::{Error, Result};
use crate::ocp::{Ocp, PrimalDual};
use crate::polyhedral::DEFAULT_TOL;
use crate::qp::QpSettings;
use crate::sensitivity::{predictor_step, PredictorConfig, RhoPolicy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Warmstart {
    /// Previous solution plus the semiderivative along `Δp`.
    Semiderivative,
    /// One-step shift of the previous solution.
    Shift,
    /// No information from the previous solution (see [`cold_start`]).
    Cold,
}

impl Warmstart {
    pub fn name(&self) -> &'static str {
        match self {
            Warmstart::Semiderivative => "semiderivative",
            Warmstart::Shift => "shift",
            Warmstart::Cold => "cold",
        }
    }
}

impl std::str::FromStr for Warmstart {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "semiderivative" => Ok(Warmstart::Semiderivative),
            "shift" => Ok(Warmstart::Shift),
            "cold" => Ok(Warmstart::Cold),
            other => Err(format!(
                "unknown warmstart mode `{other}` (expected semiderivative, shift or cold)"
            )),
        }
    }
}

impl std::fmt::Display for Warmstart {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct MpcConfig {
    pub epsilon: f64,
    pub max_corrector_iter: usize,
    pub warmstart: Warmstart,
    pub rho: RhoPolicy,
    pub sim_steps: usize,
    pub qp: QpSettings,
}

impl Default for MpcConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-5,
            max_corrector_iter: 30,
            warmstart: Warmstart::Semiderivative,
            rho: RhoPolicy::Auto,
            sim_steps: 200,
            qp: QpSettings::default(),
        }
    }
}

impl MpcConfig {
    fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) || self.sim_steps == 0 {
            return Err(Error::Dimension(format!(
                "MPC config needs epsilon > 0 and sim_steps >= 1 (got {:e}, {})",
                self.epsilon, self.sim_steps
            )));
        }
        Ok(())
    }

    pub fn corrector(&self) -> CorrectorConfig {
        CorrectorConfig {
            epsilon: self.epsilon,
            max_iter: self.max_corrector_iter,
            rho: self.rho,
            qp: self.qp,
        }
    }

    pub fn predictor(&self) -> PredictorConfig {
        PredictorConfig {
            rho: self.rho,
            cone_tol: DEFAULT_TOL,
            reference_limit: Some(10.0 * self.epsilon),
            require_regularity: false,
            qp: self.qp,
        }
    }
}

/// Per-step record of a closed-loop run.
#[derive(Debug, Clone)]
pub struct StepLog {
    pub k: usize,
    pub p: DVector<f64>,
    /// Applied input in the OCP's coordinates.
    pub u0: DVector<f64>,
    pub predictor_time: f64,
    pub corrector_time: f64,
    pub corrector_iterations: usize,
    /// Natural residual of the warm start handed to the corrector.
    pub warm_residual: f64,
    pub residual: f64,
    /// `max(Mv − h)⁺` at the accepted solution.
    pub constraint_violation: f64,
    /// The predictor could not run and the previous solution was used instead.
    pub predictor_fallback: bool,
    pub cold_restart: bool,
}

/// Zero inputs, every predicted state equal to the measurement, zero costates.
///
/// Holding the state avoids simulating open loop from a state with nonzero
/// body rates, which for the UAV can carry the attitude through the Euler
/// singularity within the horizon.
pub fn cold_start(ocp: &Ocp, p: &DVector<f64>) -> Result<PrimalDual> {
    if p.len() != ocp.n() {
        return Err(Error::Dimension(format!(
            "p has length {} (expected {})",
            p.len(),
            ocp.n()
        )));
    }
    let mut v = DVector::zeros(ocp.num_primal());
    for i in 1..=ocp.horizon() {
        v.rows_range_mut(ocp.x_range(i)).copy_from(p);
    }
    Ok(PrimalDual::new(v, DVector::zeros(ocp.num_costates())))
}

/// Shift every stage one step forward; the tail repeats the last input,
/// propagates the last state through the dynamics and repeats the last costate.
pub fn shift_warmstart(ocp: &Ocp, z: &PrimalDual) -> PrimalDual {
    let n_stages = ocp.horizon();
    let mut v = z.v.clone();
    let mut q = z.q.clone();
    for i in 0..n_stages - 1 {
        v.rows_range_mut(ocp.u_range(i))
            .copy_from(&z.v.rows_range(ocp.u_range(i + 1)));
        v.rows_range_mut(ocp.x_range(i + 1))
            .copy_from(&z.v.rows_range(ocp.x_range(i + 2)));
        q.rows_range_mut(ocp.g_range(i))
            .copy_from(&z.q.rows_range(ocp.g_range(i + 1)));
    }
    let u_last = z.v.rows_range(ocp.u_range(n_stages - 1)).into_owned();
    let x_last = z.v.rows_range(ocp.x_range(n_stages)).into_owned();
    v.rows_range_mut(ocp.u_range(n_stages - 1))
        .copy_from(&u_last);
    v.rows_range_mut(ocp.x_range(n_stages))
        .copy_from(&ocp.model().dynamics(&x_last, &u_last));
    PrimalDual::new(v, q)
}

fn violation(ocp: &Ocp, v: &DVector<f64>) -> f64 {
    ocp.constraint_blocks()
        .into_iter()
        .map(|(range, poly)| poly.violation(&v.rows_range(range).into_owned()))
        .fold(0.0, f64::max)
}

/// First input of `v`, projected onto `U₀`.
fn applied_input(ocp: &Ocp, v: &DVector<f64>) -> Result<DVector<f64>> {
    let u = v.rows_range(ocp.u_range(0)).into_owned();
    ocp.input_set().project(&u)
}

/// Solve the OCP at `p` from a cold start, with no warm start available.
pub fn solve_cold(ocp: &Ocp, p: &DVector<f64>, cfg: &MpcConfig) -> Result<CorrectorReport> {
    correct(ocp, p, cold_start(ocp, p)?, &cfg.corrector())
}

/// One iteration of the predictor-corrector scheme.
///
/// `z_prev` must solve the OCP at `p_prev`. Returns the new solution, the
/// input to apply, and the step record.
pub fn mpc_step(
    ocp: &Ocp,
    cfg: &MpcConfig,
    k: usize,
    p: &DVector<f64>,
    p_prev: &DVector<f64>,
    z_prev: &PrimalDual,
) -> Result<(PrimalDual, DVector<f64>, StepLog)> {
    let t0 = Instant::now();
    let mut predictor_fallback = false;
    let warm = match cfg.warmstart {
        Warmstart::Semiderivative => {
            let dp = p - p_prev;
            match predictor_step(ocp, p_prev, z_prev, &dp, &cfg.predictor()) {
                Ok(step) => z_prev.add(&step.dv, &step.dq),
                Err(e) => {
                    log::warn!("step {k}: predictor failed ({e}); reusing previous solution");
                    predictor_fallback = true;
                    z_prev.clone()
                }
            }
        }
        Warmstart::Shift => shift_warmstart(ocp, z_prev),
        Warmstart::Cold => cold_start(ocp, p)?,
    };
    let predictor_time = t0.elapsed().as_secs_f64();

    let t1 = Instant::now();
    let ccfg = cfg.corrector();
    let mut report = correct(ocp, p, warm, &ccfg)?;
    let warm_residual = report.residuals[0];
    let mut iterations = report.iterations;
    let mut cold_restart = false;
    if !report.converged() {
        log::warn!(
            "step {k}: corrector stopped with {:?} at residual {:e}; restarting cold",
            report.status,
            report.final_residual()
        );
        cold_restart = true;
        report = correct(ocp, p, cold_start(ocp, p)?, &ccfg)?;
        iterations += report.iterations;
        if !report.converged() {
            return Err(Error::Aborted {
                step: k,
                reason: format!(
                    "cold restart ended with {:?} at residual {:e}{}",
                    report.status,
                    report.final_residual(),
                    report
                        .failure
                        .as_deref()
                        .map(|f| format!(" ({f})"))
                        .unwrap_or_default()
                ),
            });
        }
    }
    let corrector_time = t1.elapsed().as_secs_f64();

    let u0 = applied_input(ocp, &report.z.v)?;
    let log = StepLog {
        k,
        p: p.clone(),
        u0: u0.clone(),
        predictor_time,
        corrector_time,
        corrector_iterations: iterations,
        warm_residual,
        residual: report.final_residual(),
        constraint_violation: violation(ocp, &report.z.v),
        predictor_fallback,
        cold_restart,
    };
    Ok((report.z, u0, log))
}

/// Result of [`closed_loop`]. On abort the logs cover the steps completed.
#[derive(Debug, Clone)]
pub struct ClosedLoopRun {
    pub warmstart: Warmstart,
    /// Corrector iterations and residual of the initial cold solve.
    pub initial_iterations: usize,
    pub initial_residual: f64,
    pub initial_time: f64,
    /// Plant states `x₀ … x_K` at the sampling instants.
    pub states: Vec<DVector<f64>>,
    /// Input applied at each sampling instant (same length as `states`).
    pub inputs: Vec<DVector<f64>>,
    pub logs: Vec<StepLog>,
    pub aborted: Option<String>,
}

impl ClosedLoopRun {
    pub fn total_iterations(&self) -> usize {
        self.logs.iter().map(|l| l.corrector_iterations).sum()
    }

    pub fn max_residual(&self) -> f64 {
        self.logs
            .iter()
            .map(|l| l.residual)
            .fold(self.initial_residual, f64::max)
    }

    pub fn max_violation(&self) -> f64 {
        self.logs
            .iter()
            .map(|l| l.constraint_violation)
            .fold(0.0, f64::max)
    }

    pub fn all_converged(&self) -> bool {
        self.aborted.is_none()
    }

    /// Largest violation of the OCP's stage constraints along the realized
    /// trajectory: `u₀ ∈ U₀` at the first instant, `(x_k, u_k) ∈ Z` afterwards.
    pub fn trajectory_violation(&self, ocp: &Ocp) -> f64 {
        let mut worst = 0.0_f64;
        for (k, (x, u)) in self.states.iter().zip(&self.inputs).enumerate() {
            let v = if k == 0 || ocp.stage_sets().is_empty() {
                ocp.input_set().violation(u)
            } else {
                let xu =
                    DVector::from_iterator(x.len() + u.len(), x.iter().chain(u.iter()).copied());
                ocp.stage_sets()[0].violation(&xu)
            };
            worst = worst.max(v);
        }
        worst
    }
}

/// Plant map `x⁺ = plant(x, u)` in the OCP's coordinates.
pub type Plant<'a> = &'a (dyn Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + Sync);

/// Hook `(k, x_k)` that may perturb the measured state.
pub type Disturbance<'a> = &'a mut dyn FnMut(usize, &mut DVector<f64>);

/// Run the MPC loop for `cfg.sim_steps` steps from `x0`.
///
/// The initial OCP is solved cold; afterwards each step measures the plant,
/// runs [`mpc_step`] and applies the input. `disturbance`, when given, may
/// modify the plant state after each transition.
pub fn closed_loop(
    ocp: &Ocp,
    plant: Plant<'_>,
    cfg: &MpcConfig,
    x0: &DVector<f64>,
    mut disturbance: Option<Disturbance<'_>>,
) -> Result<ClosedLoopRun> {
    cfg.validate()?;
    if x0.len() != ocp.n() {
        return Err(Error::Dimension(format!(
            "x0 has length {} (expected {})",
            x0.len(),
            ocp.n()
        )));
    }
    let t0 = Instant::now();
    let init = solve_cold(ocp, x0, cfg)?;
    let mut run = ClosedLoopRun {
        warmstart: cfg.warmstart,
        initial_iterations: init.iterations,
        initial_residual: init.final_residual(),
        initial_time: t0.elapsed().as_secs_f64(),
        states: vec![x0.clone()],
        inputs: Vec::new(),
        logs: Vec::with_capacity(cfg.sim_steps),
        aborted: None,
    };
    if !init.converged() {
        run.aborted = Some(format!(
            "initial cold solve ended with {:?} at residual {:e}",
            init.status,
            init.final_residual()
        ));
        return Ok(run);
    }

    let mut z = init.z;
    let mut u = applied_input(ocp, &z.v)?;
    let mut p_prev = x0.clone();
    for k in 1..=cfg.sim_steps {
        run.inputs.push(u.clone());
        let mut x = plant(&p_prev, &u);
        if let Some(hook) = disturbance.as_mut() {
            hook(k, &mut x);
        }
        run.states.push(x.clone());
        match mpc_step(ocp, cfg, k, &x, &p_prev, &z) {
            Ok((z_next, u_next, log)) => {
                z = z_next;
                u = u_next;
                run.logs.push(log);
            }
            Err(e) => {
                log::error!("closed loop aborted: {e}");
                run.aborted = Some(e.to_string());
                return Ok(run);
            }
        }
        p_prev = x;
    }
    run.inputs.push(u);
    Ok(run)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lq::LinearQuadratic;
    use crate::polyhedral::Polyhedron;
    use nalgebra::dvector;

    fn double_integrator(horizon: usize) -> Ocp {
        LinearQuadratic::double_integrator(0.1)
            .into_ocp(
                horizon,
                Polyhedron::from_box(&[-1.0], &[1.0]).unwrap(),
                Polyhedron::from_box(&[-5.0, -1.0, -1.0], &[5.0, 1.0, 1.0]).unwrap(),
                Polyhedron::whole_space(2),
            )
            .unwrap()
    }

    #[test]
    fn shift_index_bookkeeping() {
        let lq = LinearQuadratic::scalar_example();
        let ocp = lq
            .into_ocp(
                2,
                Polyhedron::whole_space(1),
                Polyhedron::whole_space(2),
                Polyhedron::whole_space(1),
            )
            .unwrap();
        // (u₀, x₁, u₁, x₂) = (1, 2, 3, 4), f(x, u) = x + u.
        let z = PrimalDual::new(dvector![1.0, 2.0, 3.0, 4.0], dvector![5.0, 6.0]);
        let s = shift_warmstart(&ocp, &z);
        assert_eq!(s.v, dvector![3.0, 4.0, 3.0, 7.0]);
        assert_eq!(s.q, dvector![6.0, 6.0]);
    }

    #[test]
    fn shift_preserves_equilibrium() {
        let ocp = double_integrator(4);
        let z = PrimalDual::zeros(&ocp);
        assert_eq!(shift_warmstart(&ocp, &z), z);
    }

    #[test]
    fn repeated_parameter_needs_no_work() {
        let ocp = double_integrator(6);
        let cfg = MpcConfig::default();
        let p = dvector![0.5, -0.2];
        let z = solve_cold(
            &ocp,
            &p,
            &MpcConfig {
                epsilon: 1e-10,
                ..cfg
            },
        )
        .unwrap()
        .z;
        let u_before = z.v.rows(0, 1).into_owned();
        let (z_next, u0, log) = mpc_step(&ocp, &cfg, 1, &p, &p, &z).unwrap();
        assert_eq!(log.corrector_iterations, 0);
        assert!((&z_next.v - &z.v).amax() < 1e-9);
        assert!((u0 - u_before).amax() < 1e-9);
    }

    #[test]
    fn lq_loop_from_origin_stays_put() {
        let ocp = double_integrator(5);
        let cfg = MpcConfig {
            sim_steps: 10,
            ..Default::default()
        };
        let plant = |x: &DVector<f64>, u: &DVector<f64>| ocp.model().dynamics(x, u);
        let run = closed_loop(&ocp, &plant, &cfg, &dvector![0.0, 0.0], None).unwrap();
        assert!(run.all_converged());
        assert_eq!(run.total_iterations(), 0);
        assert!(run.inputs.iter().all(|u| u.amax() == 0.0));
    }

    #[test]
    fn lq_loop_converges_in_at_most_one_iteration_per_step() {
        let ocp = double_integrator(10);
        let plant = |x: &DVector<f64>, u: &DVector<f64>| ocp.model().dynamics(x, u);
        for ws in [Warmstart::Semiderivative, Warmstart::Shift, Warmstart::Cold] {
            let cfg = MpcConfig {
                sim_steps: 30,
                warmstart: ws,
                ..Default::default()
            };
            let run = closed_loop(&ocp, &plant, &cfg, &dvector![1.0, 0.5], None).unwrap();
            assert!(run.all_converged(), "{ws}: {:?}", run.aborted);
            assert!(run.logs.iter().all(|l| l.corrector_iterations <= 1), "{ws}");
            assert!(run.max_violation() <= 1e-7);
            assert_eq!(run.states.len(), 31);
            assert_eq!(run.inputs.len(), 31);
        }
    }

    #[test]
    fn parses_mode_names() {
        assert_eq!("shift".parse::<Warmstart>().unwrap(), Warmstart::Shift);
        assert!("fast".parse::<Warmstart>().is_err());
    }
}
