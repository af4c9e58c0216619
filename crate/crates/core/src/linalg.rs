//! Small dense helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

/// Solves A p = b for symmetric positive definite A, adding λI (growing by
/// factors of ten) until the Cholesky factorization succeeds. Returns the
/// solution and the λ used.
pub(crate) fn solve_damped(a: &DMatrix<f64>, b: &DVector<f64>) -> (DVector<f64>, f64) {
    if let Some(ch) = a.clone().cholesky() {
        return (ch.solve(b), 0.0);
    }
    let scale = a.diagonal().iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(1e-300);
    let mut lambda = 1e-8 * scale;
    loop {
        let shifted = a + DMatrix::identity(a.nrows(), a.ncols()) * lambda;
        if let Some(ch) = shifted.cholesky() {
            return (ch.solve(b), lambda);
        }
        lambda *= 10.0;
    }
}

/// Inverse of a symmetric matrix; if it is singular or badly conditioned,
/// the inverse of A + λI with λ = 1e−10·|trace| is returned and the flag set.
/// `sign` is +1 for (near) positive definite A and −1 for negative definite.
pub(crate) fn inverse_with_ridge(a: &DMatrix<f64>, sign: f64) -> (DMatrix<f64>, bool) {
    let k = a.nrows();
    let well_posed = |m: &DMatrix<f64>| {
        let sv = m.clone().svd(false, false).singular_values;
        let max = sv.max();
        let min = sv.min();
        max > 0.0 && min > max * 1e-14
    };
    if well_posed(a) {
        if let Some(inv) = a.clone().try_inverse() {
            return (symmetrize(inv), false);
        }
    }
    let lambda = 1e-10 * a.trace().abs().max(f64::MIN_POSITIVE);
    let shifted = a + DMatrix::identity(k, k) * (sign * lambda);
    let inv = shifted
        .clone()
        .try_inverse()
        .or_else(|| shifted.pseudo_inverse(0.0).ok())
        .unwrap_or_else(|| DMatrix::zeros(k, k));
    (symmetrize(inv), true)
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

/// Columns that are (numerically) linear combinations of earlier columns of
/// the Gram matrix, found by a pivot-free incremental Cholesky.
pub(crate) fn dependent_columns(gram: &DMatrix<f64>, rel_tol: f64) -> Vec<usize> {
    let k = gram.nrows();
    let mut l = DMatrix::<f64>::zeros(k, k);
    let mut dependent = Vec::new();
    let mut active = vec![false; k];
    for j in 0..k {
        let mut d = gram[(j, j)];
        for m in 0..j {
            if active[m] {
                d -= l[(j, m)] * l[(j, m)];
            }
        }
        if d <= rel_tol * gram[(j, j)].abs().max(f64::MIN_POSITIVE) {
            dependent.push(j);
            continue;
        }
        let djj = d.sqrt();
        l[(j, j)] = djj;
        active[j] = true;
        for i in (j + 1)..k {
            let mut v = gram[(i, j)];
            for m in 0..j {
                if active[m] {
                    v -= l[(i, m)] * l[(j, m)];
                }
            }
            l[(i, j)] = v / djj;
        }
    }
    dependent
}

pub(crate) fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

pub(crate) fn from_rows(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    DMatrix::from_fn(r, c, |i, j| rows[i][j])
}
