//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Singular values below this fraction of the largest count as zero.
pub const RANK_TOL: f64 = 1e-10;

/// Numerical rank via singular values.
pub fn numerical_rank(m: &DMatrix<f64>) -> usize {
    if m.is_empty() {
        return 0;
    }
    let sv = m.clone().singular_values();
    let top = sv.max();
    if top <= 0.0 || !top.is_finite() {
        return 0;
    }
    sv.iter().filter(|s| **s > RANK_TOL * top).count()
}

/// Number of singular values above `RANK_TOL * scale`, for matrices derived from a source of
/// known magnitude.
pub fn rank_at_scale(m: &DMatrix<f64>, scale: f64) -> usize {
    if m.is_empty() {
        return 0;
    }
    m.clone()
        .singular_values()
        .iter()
        .filter(|s| **s > RANK_TOL * scale)
        .count()
}

/// Symmetric part `(m + m')/2`.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// `m^power` for a symmetric positive definite `m`, via the symmetric eigendecomposition.
///
/// This is the unique symmetric root, so `sym_power(q, 0.5) * sym_power(q, -0.5)` is the identity
/// to rounding.
pub fn sym_power(m: &DMatrix<f64>, power: f64) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(symmetrize(m));
    let top = eig.eigenvalues.amax();
    if eig
        .eigenvalues
        .iter()
        .any(|&w| w <= RANK_TOL * top || !w.is_finite())
    {
        return Err(Error::Singular(
            "matrix power of a non positive definite matrix",
        ));
    }
    let scaled = eig.eigenvalues.map(|w| w.powf(power));
    let u = &eig.eigenvectors;
    Ok(u * DMatrix::from_diagonal(&scaled) * u.transpose())
}

/// Symmetric square root of a positive semidefinite matrix; tiny negative eigenvalues from
/// rounding are clamped to zero.
pub fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(symmetrize(m));
    let roots = eig.eigenvalues.map(|w| w.max(0.0).sqrt());
    let u = &eig.eigenvectors;
    u * DMatrix::from_diagonal(&roots) * u.transpose()
}

/// Inverse of a symmetric positive definite matrix through Cholesky.
pub fn spd_inverse(m: &DMatrix<f64>, what: &'static str) -> Result<DMatrix<f64>> {
    let chol = symmetrize(m).cholesky().ok_or(Error::Singular(what))?;
    Ok(chol.inverse())
}

/// Solve `m x = b` for symmetric positive definite `m`.
pub fn spd_solve(m: &DMatrix<f64>, b: &DMatrix<f64>, what: &'static str) -> Result<DMatrix<f64>> {
    let chol = symmetrize(m).cholesky().ok_or(Error::Singular(what))?;
    Ok(chol.solve(b))
}

pub fn spd_solve_vec(
    m: &DMatrix<f64>,
    b: &DVector<f64>,
    what: &'static str,
) -> Result<DVector<f64>> {
    let chol = symmetrize(m).cholesky().ok_or(Error::Singular(what))?;
    Ok(chol.solve(b))
}

/// Extreme eigenvalues `(min, max)` of a symmetric matrix.
pub fn sym_eig_extremes(m: &DMatrix<f64>) -> (f64, f64) {
    let w = symmetrize(m).symmetric_eigenvalues();
    (w.min(), w.max())
}

pub fn sym_eig_max(m: &DMatrix<f64>) -> f64 {
    sym_eig_extremes(m).1
}

/// `||a - b||_F / max(||b||_F, floor)`.
pub fn rel_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>, floor: f64) -> f64 {
    (a - b).norm() / b.norm().max(floor)
}

/// Orthonormal basis of the orthogonal complement of the column space of `basis`
/// (which must have orthonormal columns). Returned as columns.
pub fn orthogonal_complement(basis: &DMatrix<f64>) -> DMatrix<f64> {
    let k = basis.nrows();
    let m = basis.ncols();
    let complement = DMatrix::identity(k, k) - basis * basis.transpose();
    let eig = SymmetricEigen::new(symmetrize(&complement));
    let mut order: Vec<usize> = (0..k).collect();
    // Eigenvalues are 1 on the complement and 0 on span(basis).
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let cols: Vec<DVector<f64>> = order[..k - m]
        .iter()
        .map(|&i| eig.eigenvectors.column(i).into_owned())
        .collect();
    DMatrix::from_columns(&cols)
}

/// Pairwise (cascade) summation; fixed tree order so the result does not depend on scheduling.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const LEAF: usize = 16;
    if xs.len() <= LEAF {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sym_power_roundtrip() {
        let q = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]);
        let h = sym_power(&q, 0.5).unwrap();
        let hi = sym_power(&q, -0.5).unwrap();
        assert!(rel_frobenius(&(&h * &h), &q, 1.0) < 1e-12);
        assert!(rel_frobenius(&(&h * &hi), &DMatrix::identity(3, 3), 1.0) < 1e-12);
        assert!(rel_frobenius(&h, &h.transpose(), 1.0) < 1e-15);
    }

    #[test]
    fn sym_power_rejects_indefinite() {
        let q = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(sym_power(&q, 0.5).is_err());
    }

    #[test]
    fn rank_of_duplicate_columns() {
        let w = DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 2.0, 2.0, 3.0, 3.0]);
        assert_eq!(numerical_rank(&w), 1);
        assert_eq!(numerical_rank(&DMatrix::<f64>::identity(4, 4)), 4);
    }

    #[test]
    fn complement_is_orthonormal_and_orthogonal() {
        let v = DVector::from_vec(vec![1.0, 2.0, 2.0]) / 3.0;
        let b = DMatrix::from_columns(&[v]);
        let c = orthogonal_complement(&b);
        assert_eq!(c.shape(), (3, 2));
        assert!((c.transpose() * &c - DMatrix::identity(2, 2)).norm() < 1e-12);
        assert!((c.transpose() * &b).norm() < 1e-12);
    }

    #[test]
    fn pairwise_sum_matches_naive() {
        let xs: Vec<f64> = (0..1000).map(|i| i as f64 * 0.5).collect();
        assert_eq!(pairwise_sum(&xs), xs.iter().sum::<f64>());
    }
}
