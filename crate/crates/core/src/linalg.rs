//! Small dense linear-algebra helpers shared by the estimators.

use nalgebra::{Cholesky, DMatrix, Dyn};

/// Relative pivot tolerance for declaring a symmetric moment matrix singular.
pub(crate) const SINGULAR_RTOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Singular;

/// Cholesky factorization of a symmetric positive definite matrix.
///
/// Fails when any pivot, relative to the matching diagonal entry of the
/// input, drops below [`SINGULAR_RTOL`]. The ratio `l_kk^2 / a_kk` is the
/// share of column `k` left after projecting out the earlier columns, so the
/// test is invariant to rescaling individual rows/columns.
pub(crate) fn spd_cholesky(a: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>, Singular> {
    let n = a.nrows();
    if n != a.ncols() || a.iter().any(|v| !v.is_finite()) {
        return Err(Singular);
    }
    for k in 0..n {
        if a[(k, k)] <= 0.0 {
            return Err(Singular);
        }
    }
    let chol = Cholesky::new(a.clone()).ok_or(Singular)?;
    let l = chol.l_dirty();
    for k in 0..n {
        let pivot = l[(k, k)];
        let ratio = pivot * pivot / a[(k, k)];
        if ratio.is_nan() || ratio <= SINGULAR_RTOL {
            return Err(Singular);
        }
    }
    Ok(chol)
}

/// Result of a multi-response least-squares fit `Y = X B + U`.
#[derive(Debug, Clone)]
pub(crate) struct LeastSquares {
    /// `m x q` coefficient matrix, one column per response.
    pub coef: DMatrix<f64>,
    /// `(X'X)^{-1}`.
    pub moment_inv: DMatrix<f64>,
    /// `n x q` residuals.
    pub residuals: DMatrix<f64>,
}

/// Least squares through the normal equations, solved with a Cholesky
/// factorization of `X'X`.
pub(crate) fn least_squares(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<LeastSquares, Singular> {
    debug_assert_eq!(x.nrows(), y.nrows());
    let xtx = x.tr_mul(x);
    let chol = spd_cholesky(&xtx)?;
    let xty = x.tr_mul(y);
    let coef = chol.solve(&xty);
    let moment_inv = chol.inverse();
    let residuals = y - x * &coef;
    Ok(LeastSquares {
        coef,
        moment_inv,
        residuals,
    })
}

/// `ln det` of a symmetric positive definite matrix.
pub(crate) fn ln_det_spd(a: &DMatrix<f64>) -> Result<f64, Singular> {
    let chol = spd_cholesky(a)?;
    let l = chol.l_dirty();
    Ok((0..a.nrows()).map(|k| l[(k, k)].ln()).sum::<f64>() * 2.0)
}

pub(crate) fn symmetrize(a: &mut DMatrix<f64>) {
    let n = a.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
}

pub(crate) fn max_asymmetry(a: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    let mut worst = 0.0_f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    worst
}
