#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use sensmpc::polyhedral::Polyhedron;

/// Random polyhedron with a known point `x` on some of its faces and a
/// normal element `n` built as a nonnegative combination of the active rows.
pub struct ConeCase {
    pub poly: Polyhedron,
    pub x: DVector<f64>,
    pub n: DVector<f64>,
    pub active: Vec<usize>,
}

pub fn random_cone_case<R: Rng>(rng: &mut R) -> ConeCase {
    let dim = rng.random_range(1..=4);
    let rows = rng.random_range(1..=6);
    let x = DVector::from_fn(dim, |_, _| rng.random_range(-1.0..1.0));
    let mut gamma = DMatrix::from_fn(rows, dim, |_, _| rng.random_range(-1.0..1.0));
    // Occasionally repeat or negate an earlier row to produce dependent faces.
    for i in 1..rows {
        if rng.random_bool(0.2) {
            let j = rng.random_range(0..i);
            let s = if rng.random_bool(0.7) {
                1.0
            } else {
                rng.random_range(0.5..2.0)
            };
            let src = gamma.row(j).into_owned() * s;
            gamma.row_mut(i).copy_from(&src);
        }
    }
    let gx = &gamma * &x;
    let mut active = Vec::new();
    let b = DVector::from_fn(rows, |i, _| {
        if rng.random_bool(0.6) {
            active.push(i);
            gx[i]
        } else {
            gx[i] + rng.random_range(0.1..1.0)
        }
    });
    // Zero weights on some active rows make them weakly active.
    let mut n = DVector::zeros(dim);
    for &i in &active {
        if rng.random_bool(0.6) {
            n += gamma.row(i).transpose() * rng.random_range(0.5..2.0);
        }
    }
    ConeCase {
        poly: Polyhedron::new(gamma, b).unwrap(),
        x,
        n,
        active,
    }
}

/// Orthogonal projection of `y` onto the null space of the rows of `a`.
pub fn project_to_null(a: &DMatrix<f64>, y: &DVector<f64>) -> DVector<f64> {
    if a.nrows() == 0 {
        return y.clone();
    }
    let svd = a.clone().svd(false, true);
    let vt = svd.v_t.unwrap();
    let mut out = y.clone();
    for (k, s) in svd.singular_values.iter().enumerate() {
        if *s > 1e-10 * svd.singular_values.max() {
            let row = vt.row(k).transpose();
            out -= &row * row.dot(y);
        }
    }
    out
}

/// Direction that hits the interesting boundary cases with positive
/// probability: exact orthogonality to `n` and to random subsets of rows.
pub fn sample_direction<R: Rng>(rng: &mut R, case: &ConeCase) -> DVector<f64> {
    let dim = case.x.len();
    let y = DVector::from_fn(dim, |_, _| rng.random_range(-1.0..1.0));
    let mut pinned: Vec<DVector<f64>> = Vec::new();
    if rng.random_bool(0.6) {
        pinned.push(case.n.clone());
    }
    for &i in &case.active {
        if rng.random_bool(0.4) {
            pinned.push(case.poly.gamma().row(i).transpose());
        }
    }
    if pinned.is_empty() {
        return y;
    }
    let a = DMatrix::from_fn(pinned.len(), dim, |r, c| pinned[r][c]);
    project_to_null(&a, &y)
}

/// Direct definition: `y ∈ T_P(x)` and `yᵀn = 0`.
pub fn in_critical_cone_direct(case: &ConeCase, y: &DVector<f64>, tol: f64) -> bool {
    let g = case.poly.gamma();
    case.active
        .iter()
        .all(|&i| g.row(i).dot(&y.transpose()) <= tol)
        && case.n.dot(y).abs() <= tol
}

/// Solve an LQ instance as one dense QP assembled by hand, without going
/// through the OCP layer. Returns `(v, q)` in the stacked ordering.
pub fn lq_oracle(
    lq: &sensmpc::lq::LinearQuadratic,
    horizon: usize,
    input_set: &Polyhedron,
    stage_set: &Polyhedron,
    terminal_set: &Polyhedron,
    p: &DVector<f64>,
) -> (DVector<f64>, DVector<f64>) {
    use sensmpc::qp::{solve_qp, QpProblem, QpSettings};
    let (n, m) = (lq.a.nrows(), lq.b.ncols());
    let j = horizon * (n + m);
    let d = horizon * n;
    let u_at = |k: usize| k * (n + m);
    let x_at = |k: usize| (k - 1) * (n + m) + m;

    let mut h = DMatrix::zeros(j, j);
    for k in 0..horizon {
        h.view_mut((u_at(k), u_at(k)), (m, m)).copy_from(&lq.r);
        let w = if k + 1 == horizon { &lq.p } else { &lq.q };
        h.view_mut((x_at(k + 1), x_at(k + 1)), (n, n)).copy_from(w);
    }

    let mut a_eq = DMatrix::zeros(d, j);
    let mut b_eq = DVector::zeros(d);
    for k in 0..horizon {
        let r = k * n;
        a_eq.view_mut((r, x_at(k + 1)), (n, n))
            .copy_from(&DMatrix::identity(n, n));
        a_eq.view_mut((r, u_at(k)), (n, m)).copy_from(&-&lq.b);
        if k == 0 {
            b_eq.rows_mut(0, n).copy_from(&(&lq.a * p));
        } else {
            a_eq.view_mut((r, x_at(k)), (n, n)).copy_from(&-&lq.a);
        }
    }

    // (column offset, set) for every constrained block.
    let mut blocks: Vec<(usize, &Polyhedron)> = vec![(u_at(0), input_set)];
    for k in 1..horizon {
        blocks.push((x_at(k), stage_set));
    }
    blocks.push((x_at(horizon), terminal_set));
    let rows: usize = blocks.iter().map(|(_, s)| s.num_rows()).sum();
    let mut a_in = DMatrix::zeros(rows, j);
    let mut b_in = DVector::zeros(rows);
    let mut r = 0;
    for (col, set) in blocks {
        let l = set.num_rows();
        a_in.view_mut((r, col), (l, set.dim()))
            .copy_from(set.gamma());
        b_in.rows_mut(r, l).copy_from(set.b());
        r += l;
    }

    let qp = QpProblem::new(h, DVector::zeros(j))
        .with_equalities(a_eq, b_eq)
        .with_inequalities(a_in, b_in);
    let settings = QpSettings {
        tol: 1e-12,
        ..Default::default()
    };
    let sol = solve_qp(&qp, &settings, None)
        .unwrap()
        .into_optimal()
        .unwrap();
    (sol.x, sol.y_eq)
}
