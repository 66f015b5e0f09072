//! Small dense helpers on top of nalgebra.

use nalgebra::DMatrix;

/// `ln det(m)` through a Cholesky factorization; `None` when `m` is not
/// (numerically) positive definite. An empty matrix has determinant one.
pub fn log_det_spd(m: &DMatrix<f64>) -> Option<f64> {
    if m.nrows() == 0 {
        return Some(0.0);
    }
    let chol = m.clone().cholesky()?;
    let l = chol.l_dirty();
    Some(2.0 * (0..m.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>())
}

pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

pub fn from_rows(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let r = rows.len();
    let c = rows.first().map_or(0, |row| row.len());
    DMatrix::from_fn(r, c, |i, j| rows[i][j])
}

/// `P m Pᵀ` where row `i` of the result is row `perm[i]` of `m`.
pub fn permute_symmetric(m: &DMatrix<f64>, perm: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(perm.len(), perm.len(), |i, j| m[(perm[i], perm[j])])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_det_of_diagonal() {
        let m = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![2.0, 3.0, 0.5]));
        assert!((log_det_spd(&m).unwrap() - 3f64.ln()).abs() < 1e-14);
        assert!(log_det_spd(&(-m)).is_none());
    }
}
