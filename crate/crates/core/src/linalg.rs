//! Small dense helpers on top of `nalgebra` for the symmetric systems the
//! Gibbs sweep solves at every iteration.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
///
/// Only the lower triangle of `a` is read. On failure the error names the
/// 1-based leading minor whose pivot was non-positive.
pub fn cholesky_lower(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let m = a.nrows();
    if a.ncols() != m {
        return Err(Error::Dimension(format!(
            "cholesky of non-square {}x{} matrix",
            a.nrows(),
            a.ncols()
        )));
    }
    let mut l = DMatrix::<f64>::zeros(m, m);
    for j in 0..m {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::NotPositiveDefinite { minor: j + 1, size: m });
        }
        let d = d.sqrt();
        l[(j, j)] = d;
        for i in (j + 1)..m {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / d;
        }
    }
    Ok(l)
}

/// Solves `L x = b` for lower-triangular `L`.
pub fn solve_lower(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let m = l.nrows();
    let mut x = b.clone();
    for i in 0..m {
        let mut s = x[i];
        for k in 0..i {
            s -= l[(i, k)] * x[k];
        }
        x[i] = s / l[(i, i)];
    }
    x
}

/// Solves `Lᵀ x = b` for lower-triangular `L`.
pub fn solve_upper_transposed(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let m = l.nrows();
    let mut x = b.clone();
    for i in (0..m).rev() {
        let mut s = x[i];
        for k in (i + 1)..m {
            s -= l[(k, i)] * x[k];
        }
        x[i] = s / l[(i, i)];
    }
    x
}

/// Solves `A x = b` given the Cholesky factor `L` of `A`.
pub fn cholesky_solve(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    solve_upper_transposed(l, &solve_lower(l, b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn factor_reconstructs_matrix() {
        let a = DMatrix::from_row_slice(3, 3, &[4.0, 2.0, 0.4, 2.0, 5.0, 1.0, 0.4, 1.0, 3.0]);
        let l = cholesky_lower(&a).unwrap();
        let back = &l * l.transpose();
        assert!((back - &a).abs().max() < 1e-12);
    }

    #[test]
    fn reports_failing_minor() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert_eq!(
            cholesky_lower(&a),
            Err(Error::NotPositiveDefinite { minor: 2, size: 2 })
        );
    }

    #[test]
    fn solve_matches_product() {
        let a = DMatrix::from_row_slice(2, 2, &[3.0, 1.0, 1.0, 2.0]);
        let b = DVector::from_vec(vec![1.0, -1.0]);
        let l = cholesky_lower(&a).unwrap();
        let x = cholesky_solve(&l, &b);
        assert!((&a * x - b).norm() < 1e-14);
    }
}
