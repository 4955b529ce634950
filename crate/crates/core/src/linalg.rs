//! Dense helpers shared by the QP solver and the regularity check.
//!
//! The central piece is [`OrderedQr`], a Householder QR of a tall matrix that
//! walks the columns in their given order and skips any column that is
//! (numerically) a combination of the columns already accepted. Earlier
//! columns therefore always win a place in the basis, which lets callers put
//! the rows they care about (e.g. the dynamics constraints) first.

use nalgebra::{DMatrix, DVector};

/// Rank-revealing QR of `A` (rows × cols) that keeps columns in order.
#[derive(Debug, Clone)]
pub struct OrderedQr {
    rows: usize,
    /// Householder vectors (unit leading entry implied) stored column by column.
    reflectors: Vec<Vec<f64>>,
    taus: Vec<f64>,
    /// Indices of the accepted (independent) columns, in order.
    selected: Vec<usize>,
    /// For every column of `A`: its coefficients on the first `r` basis vectors
    /// (r = number of columns accepted before it, plus itself if accepted).
    coeffs: Vec<Vec<f64>>,
    /// Residual norm of each rejected column after projection.
    rejected_residual: Vec<(usize, f64)>,
}

impl OrderedQr {
    /// Factor `a`, treating a column as dependent when its residual norm falls
    /// below `rel_tol * max(1, largest column norm)`.
    pub fn new(a: &DMatrix<f64>, rel_tol: f64) -> Self {
        let (rows, cols) = a.shape();
        let mut work = a.clone();
        let max_norm = (0..cols)
            .map(|c| work.column(c).norm())
            .fold(0.0_f64, f64::max);
        let threshold = rel_tol * max_norm.max(1.0);

        let mut reflectors: Vec<Vec<f64>> = Vec::new();
        let mut taus = Vec::new();
        let mut selected = Vec::new();
        let mut coeffs = Vec::with_capacity(cols);
        let mut rejected_residual = Vec::new();

        for c in 0..cols {
            let r = reflectors.len();
            let col = work.column(c);
            let tail_norm = if r < rows {
                col.rows(r, rows - r).norm()
            } else {
                0.0
            };
            if r >= rows || tail_norm <= threshold {
                coeffs.push(col.rows(0, r.min(rows)).iter().copied().collect());
                rejected_residual.push((c, tail_norm));
                continue;
            }

            // Householder vector annihilating work[r+1.., c].
            let alpha = work[(r, c)];
            let beta = if alpha >= 0.0 { -tail_norm } else { tail_norm };
            let tau = (beta - alpha) / beta;
            let scale = 1.0 / (alpha - beta);
            let mut v = vec![0.0; rows - r];
            v[0] = 1.0;
            for i in 1..rows - r {
                v[i] = work[(r + i, c)] * scale;
            }
            work[(r, c)] = beta;
            for i in r + 1..rows {
                work[(i, c)] = 0.0;
            }
            for cc in c + 1..cols {
                let slice = &mut work.column_mut(cc);
                let s = slice.as_mut_slice();
                apply_reflector(&v, tau, &mut s[r..]);
            }
            coeffs.push(work.column(c).rows(0, r + 1).iter().copied().collect());
            reflectors.push(v);
            taus.push(tau);
            selected.push(c);
        }

        Self {
            rows,
            reflectors,
            taus,
            selected,
            coeffs,
            rejected_residual,
        }
    }

    pub fn rank(&self) -> usize {
        self.reflectors.len()
    }

    pub fn selected(&self) -> &[usize] {
        &self.selected
    }

    pub fn rejected(&self) -> impl Iterator<Item = usize> + '_ {
        self.rejected_residual.iter().map(|(c, _)| *c)
    }

    /// Coefficients of column `c` of `A` in the orthonormal basis `Y`.
    pub fn column_coefficients(&self, c: usize) -> &[f64] {
        &self.coeffs[c]
    }

    /// `Qᵀ x`.
    pub fn apply_qt(&self, x: &mut [f64]) {
        for (k, (v, &tau)) in self.reflectors.iter().zip(&self.taus).enumerate() {
            apply_reflector(v, tau, &mut x[k..]);
        }
    }

    /// `Q x`.
    pub fn apply_q(&self, x: &mut [f64]) {
        for (k, (v, &tau)) in self.reflectors.iter().zip(&self.taus).enumerate().rev() {
            apply_reflector(v, tau, &mut x[k..]);
        }
    }

    /// Orthonormal basis of the orthogonal complement of the column space.
    pub fn null_space(&self) -> DMatrix<f64> {
        let r = self.rank();
        let k = self.rows - r;
        let mut z = DMatrix::zeros(self.rows, k);
        for col in 0..k {
            let s = z.column_mut(col);
            let mut s = s;
            let s = s.as_mut_slice();
            s[r + col] = 1.0;
            self.apply_q(s);
        }
        z
    }

    /// Upper-triangular factor restricted to the accepted columns (rank × rank).
    pub fn r_selected(&self) -> DMatrix<f64> {
        let r = self.rank();
        let mut m = DMatrix::zeros(r, r);
        for (j, &c) in self.selected.iter().enumerate() {
            for (i, &val) in self.coeffs[c].iter().enumerate() {
                m[(i, j)] = val;
            }
        }
        m
    }
}

fn apply_reflector(v: &[f64], tau: f64, x: &mut [f64]) {
    if tau == 0.0 {
        return;
    }
    let dot: f64 = v.iter().zip(x.iter()).map(|(a, b)| a * b).sum();
    let f = tau * dot;
    for (xi, vi) in x.iter_mut().zip(v) {
        *xi -= f * vi;
    }
}

/// Solve `Rᵀ y = b` for upper-triangular `R`.
pub fn solve_upper_transpose(r: &DMatrix<f64>, b: &[f64]) -> Vec<f64> {
    let n = r.nrows();
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= r[(k, i)] * y[k];
        }
        y[i] = s / r[(i, i)];
    }
    y
}

/// Solve `R y = b` for upper-triangular `R`.
pub fn solve_upper(r: &DMatrix<f64>, b: &[f64]) -> Vec<f64> {
    let n = r.nrows();
    let mut y = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in i + 1..n {
            s -= r[(i, k)] * y[k];
        }
        y[i] = s / r[(i, i)];
    }
    y
}

pub fn inf_norm(v: &DVector<f64>) -> f64 {
    v.amax()
}

pub fn mat_inf_norm(m: &DMatrix<f64>) -> f64 {
    m.row_iter()
        .map(|r| r.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Stack matrices with equal column counts vertically.
pub fn vstack(blocks: &[&DMatrix<f64>], cols: usize) -> DMatrix<f64> {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut r = 0;
    for b in blocks {
        if b.nrows() > 0 {
            out.view_mut((r, 0), (b.nrows(), cols)).copy_from(*b);
        }
        r += b.nrows();
    }
    out
}

/// Select rows of `m` by index.
pub fn select_rows(m: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), m.ncols(), |i, j| m[(rows[i], j)])
}
