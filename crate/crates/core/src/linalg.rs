//! Small dense least-squares helpers shared by the OLS imputer and the OLS
//! baseline. Well-conditioned fits go through Cholesky on the normal
//! equations; singular fits fall back to the minimum-norm solution via SVD.

use nalgebra::{DMatrix, DVector};

/// Result of a least-squares fit.
pub(crate) struct Lstsq {
    pub coef: Vec<f64>,
    pub rank_fallback: bool,
}

/// In-place Cholesky factorization of a symmetric positive definite matrix
/// stored row-major. Returns false when a pivot drops below tolerance,
/// signalling (numerical) rank deficiency.
fn cholesky(a: &mut [f64], d: usize, tol: f64) -> bool {
    for j in 0..d {
        let mut diag = a[j * d + j];
        for k in 0..j {
            diag -= a[j * d + k] * a[j * d + k];
        }
        if diag <= tol {
            return false;
        }
        let diag = diag.sqrt();
        a[j * d + j] = diag;
        for i in (j + 1)..d {
            let mut v = a[i * d + j];
            for k in 0..j {
                v -= a[i * d + k] * a[j * d + k];
            }
            a[i * d + j] = v / diag;
        }
    }
    true
}

/// Solves L L^T x = b given the Cholesky factor L (lower triangle of `a`).
fn cholesky_solve(a: &[f64], d: usize, b: &[f64]) -> Vec<f64> {
    let mut x = b.to_vec();
    for i in 0..d {
        for k in 0..i {
            x[i] -= a[i * d + k] * x[k];
        }
        x[i] /= a[i * d + i];
    }
    for i in (0..d).rev() {
        for k in (i + 1)..d {
            x[i] -= a[k * d + i] * x[k];
        }
        x[i] /= a[i * d + i];
    }
    x
}

/// Least squares of y on the given rows. Rows are visited in order, so the
/// result is a pure function of the included data. Falls back to the
/// minimum-norm SVD solution when the normal equations are singular; the
/// fallback is reported, and `allow_fallback = false` turns it into `None`.
pub(crate) fn lstsq_rows<'a, I>(rows: I, d: usize, allow_fallback: bool) -> Option<Lstsq>
where
    I: Iterator<Item = (&'a [f64], f64)> + Clone,
{
    let mut xtx = vec![0.0; d * d];
    let mut xty = vec![0.0; d];
    let mut n_rows = 0usize;
    let mut max_diag: f64 = 0.0;
    for (row, y) in rows.clone() {
        debug_assert_eq!(row.len(), d);
        for i in 0..d {
            for j in 0..=i {
                xtx[i * d + j] += row[i] * row[j];
            }
            xty[i] += row[i] * y;
        }
        n_rows += 1;
    }
    for i in 0..d {
        for j in 0..i {
            xtx[j * d + i] = xtx[i * d + j];
        }
        max_diag = max_diag.max(xtx[i * d + i]);
    }

    let tol = max_diag.max(1.0) * 1e-10 * d as f64;
    let mut factor = xtx.clone();
    if cholesky(&mut factor, d, tol) {
        return Some(Lstsq {
            coef: cholesky_solve(&factor, d, &xty),
            rank_fallback: false,
        });
    }
    if !allow_fallback {
        return None;
    }

    // Minimum-norm solution on the actual design matrix.
    let mut data = Vec::with_capacity(n_rows * d);
    let mut yv = Vec::with_capacity(n_rows);
    for (row, y) in rows {
        data.extend_from_slice(row);
        yv.push(y);
    }
    let x = DMatrix::from_row_slice(n_rows, d, &data);
    let y = DVector::from_vec(yv);
    let svd = x.svd(true, true);
    let coef = svd
        .solve(&y, 1e-10)
        .expect("svd solve with both factors requested");
    Some(Lstsq {
        coef: coef.iter().copied().collect(),
        rank_fallback: true,
    })
}

/// Full-rank OLS with the classical homoskedastic covariance. Returns the
/// coefficient vector, plus sigma^2 * (X'X)^{-1}[k][k] for a requested index.
pub(crate) struct OlsClassic {
    pub coef: Vec<f64>,
    pub var_coef: f64,
}

pub(crate) fn ols_classic<'a, I>(rows: I, d: usize, coef_index: usize) -> Option<OlsClassic>
where
    I: Iterator<Item = (&'a [f64], f64)> + Clone,
{
    let mut xtx = vec![0.0; d * d];
    let mut xty = vec![0.0; d];
    let mut n_rows = 0usize;
    let mut max_diag: f64 = 0.0;
    for (row, y) in rows.clone() {
        for i in 0..d {
            for j in 0..=i {
                xtx[i * d + j] += row[i] * row[j];
            }
            xty[i] += row[i] * y;
        }
        n_rows += 1;
    }
    if n_rows <= d {
        return None;
    }
    for i in 0..d {
        for j in 0..i {
            xtx[j * d + i] = xtx[i * d + j];
        }
        max_diag = max_diag.max(xtx[i * d + i]);
    }
    let tol = max_diag.max(1.0) * 1e-10 * d as f64;
    let mut factor = xtx;
    if !cholesky(&mut factor, d, tol) {
        return None;
    }
    let coef = cholesky_solve(&factor, d, &xty);

    let mut rss = 0.0;
    for (row, y) in rows {
        let fitted: f64 = row.iter().zip(&coef).map(|(a, b)| a * b).sum();
        rss += (y - fitted) * (y - fitted);
    }
    let sigma2 = rss / (n_rows - d) as f64;

    let mut e = vec![0.0; d];
    e[coef_index] = 1.0;
    let inv_col = cholesky_solve(&factor, d, &e);
    Some(OlsClassic {
        coef,
        var_coef: sigma2 * inv_col[coef_index],
    })
}
