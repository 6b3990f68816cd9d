//! Small dense linear-algebra helpers on top of `nalgebra`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::{Error, Result};

/// Symmetrises `m` in place by averaging with its transpose.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Eigenvalues of a symmetric matrix, ascending.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let mut s = m.clone();
    symmetrize(&mut s);
    let mut ev: Vec<f64> = SymmetricEigen::new(s).eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(m).first().copied().unwrap_or(f64::NAN)
}

/// 2-norm condition number via singular values. Infinite when singular.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    if m.iter().any(|v| !v.is_finite()) {
        return f64::INFINITY;
    }
    let sv = m.clone().singular_values();
    let max = sv.iter().copied().fold(0.0, f64::max);
    let min = sv.iter().copied().fold(f64::INFINITY, f64::min);
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Inverse of a symmetric positive definite matrix via Cholesky.
pub fn spd_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mut s = m.clone();
    symmetrize(&mut s);
    let chol = s
        .cholesky()
        .ok_or_else(|| Error::Singular("matrix is not positive definite".into()))?;
    let mut inv = chol.inverse();
    symmetrize(&mut inv);
    Ok(inv)
}

/// Solves `a x = b` by LU with partial pivoting.
pub fn solve(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    a.clone()
        .lu()
        .solve(b)
        .ok_or_else(|| Error::Singular("linear system is singular".into()))
}

pub fn trace(m: &DMatrix<f64>) -> f64 {
    m.diagonal().sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spd_inverse_round_trips() {
        let m = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let inv = spd_inverse(&m).unwrap();
        let id = &m * &inv;
        assert!((id - DMatrix::identity(2, 2)).abs().max() < 1e-12);
    }

    #[test]
    fn eigenvalues_sorted() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, -1.0]);
        assert_eq!(sym_eigenvalues(&m), vec![-1.0, 2.0]);
        assert!(condition_number(&DMatrix::zeros(2, 2)).is_infinite());
    }
}
