//! Small dense linear algebra: Cholesky factorization and SPD solves.
//!
//! All systems in this crate are small (fixed-effect blocks, learner design
//! matrices with at most a few dozen columns), so a plain O(n^3) Cholesky
//! is both adequate and fully deterministic.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
pub fn cholesky(a: &Array2<f64>) -> Result<Array2<f64>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::Numeric("cholesky: matrix not square".into()));
    }
    let mut l = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            if i == j {
                if s <= 0.0 || !s.is_finite() {
                    return Err(Error::Numeric(format!(
                        "cholesky: matrix not positive definite (pivot {i} = {s:e})"
                    )));
                }
                l[[i, j]] = s.sqrt();
            } else {
                l[[i, j]] = s / l[[j, j]];
            }
        }
    }
    Ok(l)
}

/// Solve `L L^T x = b` given the lower factor `L`.
pub fn cholesky_solve(l: &Array2<f64>, b: &Array1<f64>) -> Array1<f64> {
    let n = l.nrows();
    let mut x = b.clone();
    // forward: L y = b
    for i in 0..n {
        let mut s = x[i];
        for k in 0..i {
            s -= l[[i, k]] * x[k];
        }
        x[i] = s / l[[i, i]];
    }
    // backward: L^T x = y
    for i in (0..n).rev() {
        let mut s = x[i];
        for k in (i + 1)..n {
            s -= l[[k, i]] * x[k];
        }
        x[i] = s / l[[i, i]];
    }
    x
}

/// Solve the SPD system `a x = b`.
pub fn solve_spd(a: &Array2<f64>, b: &Array1<f64>) -> Result<Array1<f64>> {
    Ok(cholesky_solve(&cholesky(a)?, b))
}

/// log det of the matrix whose Cholesky factor is `l`.
pub fn logdet_from_cholesky(l: &Array2<f64>) -> f64 {
    (0..l.nrows()).map(|i| 2.0 * l[[i, i]].ln()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn solves_known_spd_system() {
        let a = array![[4.0, 2.0, 0.6], [2.0, 5.0, 1.5], [0.6, 1.5, 3.0]];
        let x_true = array![1.0, -2.0, 0.5];
        let b = a.dot(&x_true);
        let x = solve_spd(&a, &b).unwrap();
        for i in 0..3 {
            assert_abs_diff_eq!(x[i], x_true[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn logdet_matches_product_of_eigen_free_case() {
        let a = array![[2.0, 0.0], [0.0, 8.0]];
        let l = cholesky(&a).unwrap();
        assert_abs_diff_eq!(logdet_from_cholesky(&l), (16.0f64).ln(), epsilon = 1e-12);
    }

    #[test]
    fn rejects_indefinite_matrix() {
        let a = array![[1.0, 2.0], [2.0, 1.0]];
        assert!(cholesky(&a).is_err());
    }
}
