mod common;

use common::lq_oracle;
use nalgebra::{dmatrix, dvector, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sensmpc::corrector::natural_residual;
use sensmpc::lq::LinearQuadratic;
use sensmpc::ocp::{KktData, Ocp, PrimalDual};
use sensmpc::polyhedral::{Polyhedron, DEFAULT_TOL};
use sensmpc::sensitivity::{
    critical_cone_at, lvi_residual, predictor_step, regularize_hessian, PredictorConfig, RhoPolicy,
};

fn scalar(input_set: Polyhedron) -> Ocp {
    LinearQuadratic::scalar_example()
        .into_ocp(
            1,
            input_set,
            Polyhedron::whole_space(2),
            Polyhedron::whole_space(1),
        )
        .unwrap()
}

/// `u₀ ≥ −0.3`.
fn lower_bounded() -> Polyhedron {
    Polyhedron::new(dmatrix![-1.0], dvector![0.3]).unwrap()
}

/// Hand solution of the scalar problem: `u₀ = max(−p/2, −0.3)` when bounded.
fn scalar_solution(p: f64, bounded: bool) -> PrimalDual {
    let u = if bounded {
        (-p / 2.0).max(-0.3)
    } else {
        -p / 2.0
    };
    let x = p + u;
    // ∇_{x₁}L = x₁ + q₁ = 0.
    PrimalDual::new(dvector![u, x], dvector![-x])
}

struct LqInstance {
    lq: LinearQuadratic,
    horizon: usize,
    input_set: Polyhedron,
    stage_set: Polyhedron,
    terminal_set: Polyhedron,
}

impl LqInstance {
    fn double_integrator() -> Self {
        Self {
            lq: LinearQuadratic::double_integrator(0.1),
            horizon: 6,
            input_set: Polyhedron::from_box(&[-0.4], &[0.4]).unwrap(),
            stage_set: Polyhedron::from_box(&[-1.0, -0.5, -0.4], &[1.0, 0.5, 0.4]).unwrap(),
            terminal_set: Polyhedron::whole_space(2),
        }
    }

    fn ocp(&self) -> Ocp {
        self.lq
            .clone()
            .into_ocp(
                self.horizon,
                self.input_set.clone(),
                self.stage_set.clone(),
                self.terminal_set.clone(),
            )
            .unwrap()
    }

    fn solve(&self, p: &DVector<f64>) -> PrimalDual {
        let (v, q) = lq_oracle(
            &self.lq,
            self.horizon,
            &self.input_set,
            &self.stage_set,
            &self.terminal_set,
            p,
        );
        PrimalDual::new(v, q)
    }
}

fn cfg() -> PredictorConfig {
    PredictorConfig::default()
}

#[test]
fn zero_parameter_change_gives_zero_step() {
    let ocp = scalar(Polyhedron::whole_space(1));
    let step = predictor_step(
        &ocp,
        &dvector![1.0],
        &scalar_solution(1.0, false),
        &dvector![0.0],
        &cfg(),
    )
    .unwrap();
    assert!(step.dv.amax() <= 1e-12 && step.dq.amax() <= 1e-12);
}

#[test]
fn unconstrained_scalar_example() {
    let ocp = scalar(Polyhedron::whole_space(1));
    let z_bar = scalar_solution(1.0, false);
    let step = predictor_step(&ocp, &dvector![1.0], &z_bar, &dvector![0.2], &cfg()).unwrap();
    assert!((&step.dv - dvector![-0.1, 0.1]).amax() <= 1e-12);
    assert!((step.dq[0] + 0.1).abs() <= 1e-12);
    // The predicted point solves the problem at the new parameter.
    let z = z_bar.add(&step.dv, &step.dq);
    assert!(natural_residual(&ocp, &dvector![1.2], &z).unwrap() <= 1e-12);
}

#[test]
fn weakly_active_bound_gives_one_sided_derivatives() {
    let ocp = scalar(lower_bounded());
    let p_bar = dvector![0.6];
    let z_bar = scalar_solution(0.6, true);
    assert!(natural_residual(&ocp, &p_bar, &z_bar).unwrap() <= 1e-15);

    let up = predictor_step(&ocp, &p_bar, &z_bar, &dvector![0.2], &cfg()).unwrap();
    assert!((&up.dv - dvector![0.0, 0.2]).amax() <= 1e-9);
    assert!((up.dq[0] + 0.2).abs() <= 1e-9);

    let down = predictor_step(&ocp, &p_bar, &z_bar, &dvector![-0.2], &cfg()).unwrap();
    assert!((&down.dv - dvector![0.1, -0.1]).amax() <= 1e-9);
    assert!((down.dq[0] - 0.1).abs() <= 1e-9);

    // Not linear: Ds(−Δp) ≠ −Ds(Δp).
    assert!((&up.dv + &down.dv).amax() > 0.05);
}

#[test]
fn critical_cone_row_classification() {
    let tol = DEFAULT_TOL;
    let interior = scalar(Polyhedron::whole_space(1));
    let cone =
        critical_cone_at(&interior, &dvector![1.0], &scalar_solution(1.0, false), tol).unwrap();
    assert!(cone.ineq_rows.is_empty() && cone.eq_rows.is_empty());

    // Strongly active: u₀ = −0.3 with positive multiplier at p̄ = 1.
    let bounded = scalar(lower_bounded());
    let cone =
        critical_cone_at(&bounded, &dvector![1.0], &scalar_solution(1.0, true), tol).unwrap();
    assert_eq!(cone.eq_rows, vec![0]);
    assert!(cone.ineq_rows.is_empty());

    // Weakly active at p̄ = 0.6.
    let cone =
        critical_cone_at(&bounded, &dvector![0.6], &scalar_solution(0.6, true), tol).unwrap();
    assert_eq!(cone.ineq_rows, vec![0]);
    assert!(cone.eq_rows.is_empty());
}

#[test]
fn semiderivative_is_positively_homogeneous() {
    let inst = LqInstance::double_integrator();
    let ocp = inst.ocp();
    let p_bar = dvector![0.8, 0.3];
    let z_bar = inst.solve(&p_bar);
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..10 {
        let dp = DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0));
        let base = predictor_step(&ocp, &p_bar, &z_bar, &dp, &cfg()).unwrap();
        for t in [0.5, 2.0] {
            let scaled = predictor_step(&ocp, &p_bar, &z_bar, &(&dp * t), &cfg()).unwrap();
            assert!((&scaled.dv - &base.dv * t).amax() <= 1e-8);
            assert!((&scaled.dq - &base.dq * t).amax() <= 1e-8);
        }
    }
}

#[test]
fn semiderivative_is_exact_on_lq() {
    let inst = LqInstance::double_integrator();
    let ocp = inst.ocp();
    let p_bar = dvector![0.8, 0.3];
    let z_bar = inst.solve(&p_bar);
    let stacked = ocp.stack_constraints();
    assert!(
        !stacked.active_set(&z_bar.v, 1e-7).unwrap().is_empty(),
        "instance should have active bounds"
    );

    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let dp = DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0)).normalize();
        let step = predictor_step(&ocp, &p_bar, &z_bar, &dp, &cfg()).unwrap();
        for t in [1e-3, 1e-2] {
            let exact = inst.solve(&(&p_bar + &dp * t));
            let predicted = z_bar.add(&(&step.dv * t), &(&step.dq * t));
            worst = worst.max(exact.distance(&predicted));
        }
    }
    assert!(worst <= 1e-7, "worst deviation {worst:e}");
}

#[test]
fn forced_regularization_recovers_multipliers() {
    let inst = LqInstance::double_integrator();
    let ocp = inst.ocp();
    let p_bar = dvector![0.8, 0.3];
    let z_bar = inst.solve(&p_bar);
    let plain = PredictorConfig {
        rho: RhoPolicy::Fixed(0.0),
        ..cfg()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for _ in 0..5 {
        let dp = DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0));
        let base = predictor_step(&ocp, &p_bar, &z_bar, &dp, &plain).unwrap();
        assert!(!base.regularized);
        for rho in [0.5, 10.0, 1e3] {
            let reg = PredictorConfig {
                rho: RhoPolicy::Fixed(rho),
                ..cfg()
            };
            let step = predictor_step(&ocp, &p_bar, &z_bar, &dp, &reg).unwrap();
            assert!(step.regularized && step.rho == rho);
            assert!((&step.dv - &base.dv).amax() <= 1e-7);
            assert!((&step.dq - &base.dq).amax() <= 1e-6);
        }
    }
}

#[test]
fn regularization_convexifies_for_large_rho() {
    // Indefinite R that is positive definite on null(G).
    let r = dmatrix![1.0, 0.0, 0.0; 0.0, 2.0, 0.0; 0.0, 0.0, -1.0];
    let g = dmatrix![0.0, 0.3, 1.0];
    let kkt = KktData {
        r,
        g,
        pmat: DMatrix::zeros(3, 1),
        qmat: DMatrix::zeros(1, 1),
        grad_l: DVector::zeros(3),
        gval: DVector::zeros(1),
    };
    assert!(sensmpc::sensitivity::regularity_check(&kkt, 1e-10).unwrap());
    let min_eig = |rho: f64| regularize_hessian(&kkt, rho).symmetric_eigenvalues().min();
    let mut rho = 1e-3;
    while min_eig(rho) < 0.0 {
        rho *= 2.0;
        assert!(rho < 1e6, "no threshold found");
    }
    for factor in [1.0, 3.0, 100.0] {
        assert!(min_eig(rho * factor) >= -1e-12);
    }
}

#[test]
fn duplicated_rows_leave_step_unchanged() {
    let inst = LqInstance::double_integrator();
    let ocp = inst.ocp();
    let p_bar = dvector![0.8, 0.3];
    let z_bar = inst.solve(&p_bar);
    let dp = dvector![0.3, -0.7];
    let base = predictor_step(&ocp, &p_bar, &z_bar, &dp, &cfg()).unwrap();

    let variants = (0..inst.input_set.num_rows())
        .map(|i| {
            (
                inst.input_set.with_duplicated_row(i),
                inst.stage_set.clone(),
            )
        })
        .chain((0..inst.stage_set.num_rows()).map(|i| {
            (
                inst.input_set.clone(),
                inst.stage_set.with_duplicated_row(i),
            )
        }));
    for (u0, z) in variants {
        let dup = inst
            .lq
            .clone()
            .into_ocp(inst.horizon, u0, z, inst.terminal_set.clone())
            .unwrap();
        let step = predictor_step(&dup, &p_bar, &z_bar, &dp, &cfg()).unwrap();
        assert!((&step.dv - &base.dv).amax() <= 1e-6);
        assert!((&step.dq - &base.dq).amax() <= 1e-6);
    }
}

#[test]
fn lvi_residual_behaviour() {
    let inst = LqInstance::double_integrator();
    let ocp = inst.ocp();
    let p_bar = dvector![0.8, 0.3];
    let z_bar = inst.solve(&p_bar);
    let kkt = ocp.eval_kkt_data(&p_bar, &z_bar).unwrap();
    let stacked = ocp.stack_constraints();
    let dp = dvector![0.5, -0.2];
    let step = predictor_step(&ocp, &p_bar, &z_bar, &dp, &cfg()).unwrap();

    let at_step = lvi_residual(&kkt, &stacked, &step.cone, &dp, &step.dv, &step.dq).unwrap();
    assert!(at_step <= 1e-7, "{at_step:e}");

    let zero_v = DVector::zeros(step.dv.len());
    let zero_q = DVector::zeros(step.dq.len());
    assert!(lvi_residual(&kkt, &stacked, &step.cone, &dp, &zero_v, &zero_q).unwrap() > 1e-3);

    let mut bumped = step.dv.clone();
    bumped[0] += 1e-3;
    assert!(lvi_residual(&kkt, &stacked, &step.cone, &dp, &bumped, &step.dq).unwrap() >= 1e-4);
}
