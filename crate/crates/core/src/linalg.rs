//! Factorizations with the diagonal jitter escalation used across the crate.

use nalgebra::{DMatrix, DVector, Dyn, Cholesky, LU};

use crate::error::{Error, Result};

/// Relative jitter levels tried in order; the first is a plain factorization.
pub const JITTER_LADDER: [f64; 8] = [0.0, 1e-12, 1e-11, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6];

/// Cholesky factor of `mat + ε·scale·I` for the smallest ε on the ladder that
/// succeeds. Returns the factor and the absolute jitter added.
pub fn cholesky_jittered(mat: &DMatrix<f64>, scale: f64) -> Result<(Cholesky<f64, Dyn>, f64)> {
    let mut last = 0.0;
    for eps in JITTER_LADDER {
        let jitter = eps * scale;
        let mut m = mat.clone();
        if jitter > 0.0 {
            for i in 0..m.nrows() {
                m[(i, i)] += jitter;
            }
        }
        if let Some(ch) = m.cholesky() {
            return Ok((ch, jitter));
        }
        last = jitter;
    }
    Err(Error::FactorizationFailure { jitter: last })
}

/// LU factorization of a bordered (ordinary Kriging) system, escalating
/// jitter on the leading `n × n` covariance block when it is singular.
pub fn bordered_lu(cov: &DMatrix<f64>, scale: f64) -> Result<(LU<f64, Dyn, Dyn>, f64)> {
    let n = cov.nrows();
    for eps in JITTER_LADDER {
        let jitter = eps * scale;
        let mut a = DMatrix::zeros(n + 1, n + 1);
        a.view_mut((0, 0), (n, n)).copy_from(cov);
        for i in 0..n {
            a[(i, i)] += jitter;
            a[(i, n)] = 1.0;
            a[(n, i)] = 1.0;
        }
        let lu = a.lu();
        if lu.is_invertible() && well_conditioned(&lu) {
            return Ok((lu, jitter));
        }
    }
    Err(Error::SingularSystem)
}

// LU::is_invertible only rejects exact zeros on the diagonal of U.
fn well_conditioned(lu: &LU<f64, Dyn, Dyn>) -> bool {
    let u = lu.u();
    let diag: Vec<f64> = (0..u.nrows()).map(|i| u[(i, i)].abs()).collect();
    let max = diag.iter().cloned().fold(0.0, f64::max);
    let min = diag.iter().cloned().fold(f64::INFINITY, f64::min);
    max > 0.0 && min > max * 1e-14
}

/// `log det` of a matrix from its Cholesky factor.
pub fn log_det(ch: &Cholesky<f64, Dyn>) -> f64 {
    let l = ch.l_dirty();
    (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>() * 2.0
}

/// Quadratic form `xᵀ A⁻¹ x` from the Cholesky factor of `A`.
pub fn inv_quad(ch: &Cholesky<f64, Dyn>, x: &DVector<f64>) -> f64 {
    let mut y = x.clone();
    ch.l_dirty()
        .solve_lower_triangular_mut(&mut y);
    y.norm_squared()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plain_factorization_needs_no_jitter() {
        let m = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let (_, j) = cholesky_jittered(&m, 1.0).unwrap();
        assert_eq!(j, 0.0);
    }

    #[test]
    fn singular_psd_is_rescued() {
        let m = DMatrix::from_element(3, 3, 1.0);
        let (ch, j) = cholesky_jittered(&m, 1.0).unwrap();
        assert!(j > 0.0 && j <= 1e-6);
        let back = ch.l() * ch.l().transpose();
        assert!((back - m).abs().max() <= 1e-6 + 1e-12);
    }

    #[test]
    fn indefinite_fails() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(
            cholesky_jittered(&m, 1.0),
            Err(Error::FactorizationFailure { .. })
        ));
    }

    #[test]
    fn log_det_and_quad() {
        let m = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let (ch, _) = cholesky_jittered(&m, 1.0).unwrap();
        assert!((log_det(&ch) - 11f64.ln()).abs() < 1e-12);
        let x = DVector::from_vec(vec![1.0, 2.0]);
        // A⁻¹ = [[3,-1],[-1,4]]/11
        let expect = (3.0 - 2.0 * 2.0 + 4.0 * 4.0) / 11.0;
        assert!((inv_quad(&ch, &x) - expect).abs() < 1e-12);
    }

    #[test]
    fn bordered_system_duplicates_need_jitter() {
        let cov = DMatrix::from_element(2, 2, 1.0);
        let (lu, jitter) = bordered_lu(&cov, 1.0).unwrap();
        assert!(jitter > 0.0);
        let sol = lu.solve(&DVector::from_vec(vec![1.0, 1.0, 1.0])).unwrap();
        assert!((sol[0] - 0.5).abs() < 1e-6 && (sol[1] - 0.5).abs() < 1e-6);
    }
}
