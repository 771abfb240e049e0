//! Orthogonal canonical form of the benchmark problem.
//!
//! `H = (H1; H2)` is orthogonal with the rows of `H2` spanning the column space of `Q^{-1/2} W`
//! and `H1` spanning its complement. With `z_i = H_i Q^{1/2} y` the model becomes
//! `(z1, z2) ~ N((xi1, xi2), V)` where `V_ij = H_i Q^{1/2} D Q^{1/2} H_j'`, and the constraint only
//! touches `z2`. Everything here except the `z` vectors is independent of `y`, so it lives in
//! [`CanonicalDesign`] and is shared across replications.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::linalg::{orthogonal_complement, rank_at_scale, spd_inverse, sym_power, symmetrize};
use crate::model::{BenchmarkSpec, FayHerriotModel, Target};

#[derive(Debug, Clone, PartialEq)]
pub struct CanonicalBasis {
    /// (k - m) x k.
    pub h1: DMatrix<f64>,
    /// m x k.
    pub h2: DMatrix<f64>,
}

impl CanonicalBasis {
    /// Stacked `H = (H1; H2)`.
    pub fn h(&self) -> DMatrix<f64> {
        let (r1, r2, k) = (self.h1.nrows(), self.h2.nrows(), self.h1.ncols());
        let mut h = DMatrix::zeros(r1 + r2, k);
        h.rows_mut(0, r1).copy_from(&self.h1);
        h.rows_mut(r1, r2).copy_from(&self.h2);
        h
    }

    /// Rotates each block within its own subspace: `H1 <- R1 H1`, `H2 <- R2 H2`.
    /// Both rotations must be orthogonal.
    pub fn rotated(&self, r1: &DMatrix<f64>, r2: &DMatrix<f64>) -> Result<Self> {
        for (r, n, name) in [(r1, self.h1.nrows(), "R1"), (r2, self.h2.nrows(), "R2")] {
            if r.shape() != (n, n) {
                return Err(Error::Dimension(format!(
                    "{name} must be {n}x{n}, got {:?}",
                    r.shape()
                )));
            }
            if (r * r.transpose() - DMatrix::identity(n, n)).norm() > 1e-10 {
                return Err(Error::Assumption(format!("{name} is not orthogonal")));
            }
        }
        Ok(Self {
            h1: r1 * &self.h1,
            h2: r2 * &self.h2,
        })
    }
}

/// Builds `H` from the SVD of `Q^{-1/2} W`: left singular vectors give `H2`, the orthogonal
/// complement gives `H1`.
pub fn build_basis(spec: &BenchmarkSpec) -> Result<CanonicalBasis> {
    let q_inv_half = sym_power(spec.q(), -0.5)?;
    let scaled_w = q_inv_half * spec.w();
    let m = spec.m();
    let svd = scaled_w.svd(true, false);
    let u = svd.u.ok_or(Error::Singular("SVD of Q^{-1/2}W"))?;
    let top = svd.singular_values.max();
    if svd
        .singular_values
        .iter()
        .filter(|s| **s > 1e-10 * top)
        .count()
        < m
    {
        return Err(Error::Assumption("W must have full column rank m".into()));
    }
    let u2 = u.columns(0, m).into_owned();
    let u1 = orthogonal_complement(&u2);
    Ok(CanonicalBasis {
        h1: u1.transpose(),
        h2: u2.transpose(),
    })
}

/// Symmetric eigendecomposition `Sigma = U diag(s) U'` used to diagonalize `Sigma + lambda I`.
#[derive(Debug, Clone)]
pub struct Diagonalized {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
}

impl Diagonalized {
    pub fn new(sigma: &DMatrix<f64>) -> Result<Self> {
        let eig = SymmetricEigen::new(symmetrize(sigma));
        if eig.eigenvalues.iter().any(|&v| v <= 0.0 || !v.is_finite()) {
            return Err(Error::Singular("covariance block is not positive definite"));
        }
        Ok(Self {
            values: eig.eigenvalues,
            vectors: eig.eigenvectors,
        })
    }
}

/// The y-independent part of the canonical form.
#[derive(Debug, Clone)]
pub struct CanonicalDesign {
    pub basis: CanonicalBasis,
    pub k: usize,
    pub m: usize,
    pub p: usize,
    pub q_half: DMatrix<f64>,
    pub q_inv_half: DMatrix<f64>,
    pub v11: DMatrix<f64>,
    pub v12: DMatrix<f64>,
    pub v22: DMatrix<f64>,
    /// Schur complement `V11 - V12 V22^{-1} V21`.
    pub v11_2: DMatrix<f64>,
    /// `V12 V22^{-1}`.
    pub coupling: DMatrix<f64>,
    /// `(H1 - V12 V22^{-1} H2) Q^{1/2} X`.
    pub x3: DMatrix<f64>,
    /// `H1 Q^{1/2} X`.
    pub x4: DMatrix<f64>,
    /// `(W' Q^{-1/2} H2')^{-1} t0` for a fixed target.
    pub xi0: Option<DVector<f64>>,
    /// Eigendecomposition of `v11_2`.
    pub v11_2_eig: Diagonalized,
}

impl CanonicalDesign {
    pub fn new(
        model: &FayHerriotModel,
        spec: &BenchmarkSpec,
        basis: CanonicalBasis,
    ) -> Result<Self> {
        let (k, m, p) = (model.k(), spec.m(), model.p());
        if spec.k() != k
            || basis.h1.ncols() != k
            || basis.h2.nrows() != m
            || basis.h1.nrows() + m != k
        {
            return Err(Error::Dimension(
                "basis, model and benchmark disagree on k or m".into(),
            ));
        }
        let q_half = sym_power(spec.q(), 0.5)?;
        let q_inv_half = sym_power(spec.q(), -0.5)?;
        // Q^{1/2} D Q^{1/2}
        let mut scaled = q_half.clone();
        for (j, mut col) in scaled.column_iter_mut().enumerate() {
            col *= model.d()[j];
        }
        let s = symmetrize(&(scaled * &q_half));
        let h1s = &basis.h1 * &s;
        let h2s = &basis.h2 * &s;
        let v11 = symmetrize(&(&h1s * basis.h1.transpose()));
        let v12 = &h1s * basis.h2.transpose();
        let v22 = symmetrize(&(&h2s * basis.h2.transpose()));
        let v22_inv = spd_inverse(&v22, "V22")?;
        let coupling = &v12 * &v22_inv;
        let v11_2 = symmetrize(&(&v11 - &coupling * v12.transpose()));
        let v11_2_eig = Diagonalized::new(&v11_2)?;

        let qx = &q_half * model.x();
        let x4 = &basis.h1 * &qx;
        let x3 = (&basis.h1 - &coupling * &basis.h2) * &qx;
        let scale = qx.clone().singular_values().max();
        if rank_at_scale(&x3, scale) < p {
            return Err(Error::Assumption(format!(
                "X3 = (H1 - V12 V22^-1 H2) Q^1/2 X must have rank p = {p}"
            )));
        }
        if rank_at_scale(&x4, scale) < p {
            return Err(Error::Assumption(format!(
                "X4 = H1 Q^1/2 X must have rank p = {p}"
            )));
        }

        let xi0 = match spec.target() {
            Target::WeightedDirect => None,
            Target::Fixed(t0) => {
                if t0.len() != m {
                    return Err(Error::Dimension(format!(
                        "t0 has {} entries, m = {m}",
                        t0.len()
                    )));
                }
                let anchor = spec.w().transpose() * &q_inv_half * basis.h2.transpose();
                let lu = anchor.lu();
                let solved = lu
                    .solve(&DVector::from_column_slice(t0))
                    .filter(|v| v.iter().all(|x| x.is_finite()))
                    .ok_or_else(|| {
                        Error::Assumption(
                            "W' Q^-1/2 H2' must be non-singular for a fixed target".into(),
                        )
                    })?;
                Some(solved)
            }
        };

        Ok(Self {
            basis,
            k,
            m,
            p,
            q_half,
            q_inv_half,
            v11,
            v12,
            v22,
            v11_2,
            coupling,
            x3,
            x4,
            xi0,
            v11_2_eig,
        })
    }

    /// Canonical coordinates of an observation.
    pub fn frame(self: &Arc<Self>, y: &DVector<f64>) -> Result<CanonicalFrame> {
        if y.len() != self.k {
            return Err(Error::Dimension(format!(
                "y has {} entries, k = {}",
                y.len(),
                self.k
            )));
        }
        let qy = &self.q_half * y;
        let z1 = &self.basis.h1 * &qy;
        let z2 = &self.basis.h2 * &qy;
        let z3 = &z1 - &self.coupling * &z2;
        let z4 = self
            .xi0
            .as_ref()
            .map(|xi0| &z1 - &self.coupling * (&z2 - xi0));
        Ok(CanonicalFrame {
            design: Arc::clone(self),
            z1,
            z2,
            z3,
            z4,
        })
    }

    /// Maps canonical blocks back: `Q^{-1/2} (H1' a + H2' b)`.
    pub fn to_original(&self, a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
        &self.q_inv_half * (self.basis.h1.tr_mul(a) + self.basis.h2.tr_mul(b))
    }

    /// Parameter-side images `(xi1, xi2) = (H1 Q^{1/2} mu, H2 Q^{1/2} mu)`.
    pub fn images(&self, mu: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let qm = &self.q_half * mu;
        (&self.basis.h1 * &qm, &self.basis.h2 * &qm)
    }
}

/// Canonical coordinates of one observation together with the shared design.
#[derive(Debug, Clone)]
pub struct CanonicalFrame {
    pub design: Arc<CanonicalDesign>,
    pub z1: DVector<f64>,
    pub z2: DVector<f64>,
    /// `z1 - V12 V22^{-1} z2`, uncorrelated with `z2`.
    pub z3: DVector<f64>,
    /// `z1 - V12 V22^{-1} (z2 - xi0)`, only for a fixed target.
    pub z4: Option<DVector<f64>>,
}

/// One-shot construction of design and frame.
pub fn build_frame(
    model: &FayHerriotModel,
    spec: &BenchmarkSpec,
    y: &DVector<f64>,
    basis: CanonicalBasis,
) -> Result<CanonicalFrame> {
    Arc::new(CanonicalDesign::new(model, spec, basis)?).frame(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::rel_frobenius;

    fn block_identity(k: usize, m: usize) -> DMatrix<f64> {
        let mut b = DMatrix::zeros(k, k);
        for i in k - m..k {
            b[(i, i)] = 1.0;
        }
        b
    }

    #[test]
    fn axis_aligned_basis() {
        let k = 4;
        let mut w = DMatrix::zeros(k, 1);
        w[(k - 1, 0)] = 1.0;
        let spec =
            BenchmarkSpec::new(w.clone(), DMatrix::identity(k, k), Target::WeightedDirect).unwrap();
        let basis = build_basis(&spec).unwrap();
        assert!((basis.h2[(0, k - 1)].abs() - 1.0).abs() < 1e-12);
        assert!((&basis.h1 * &w).norm() < 1e-12);
        let h = basis.h();
        let m = &h * &w * w.transpose() * h.transpose();
        assert!(rel_frobenius(&m, &block_identity(k, 1), 1.0) < 1e-12);
    }

    #[test]
    fn isotropic_blocks() {
        let k = 5;
        let x = DMatrix::from_fn(k, 2, |i, j| if j == 0 { 1.0 } else { i as f64 });
        let model = FayHerriotModel::new(x, DVector::from_element(k, 1.0)).unwrap();
        let w = DMatrix::from_column_slice(k, 1, &[1.0, 2.0, 0.5, 1.0, 3.0]);
        let spec = BenchmarkSpec::new(w, DMatrix::identity(k, k), Target::WeightedDirect).unwrap();
        let y = DVector::from_vec(vec![0.3, -1.0, 2.0, 0.7, 1.1]);
        let frame = build_frame(&model, &spec, &y, build_basis(&spec).unwrap()).unwrap();
        let des = &frame.design;
        assert!(rel_frobenius(&des.v11, &DMatrix::identity(k - 1, k - 1), 1.0) < 1e-12);
        assert!(des.v12.norm() < 1e-12);
        assert!(rel_frobenius(&des.v22, &DMatrix::identity(1, 1), 1.0) < 1e-12);
        assert!(rel_frobenius(&des.v11_2, &DMatrix::identity(k - 1, k - 1), 1.0) < 1e-12);
        assert!((&frame.z3 - &frame.z1).norm() < 1e-12);
    }

    #[test]
    fn anchor_recovers_preimage() {
        let k = 5;
        let x = DMatrix::from_fn(k, 1, |_, _| 1.0);
        let d = DVector::from_vec(vec![0.5, 1.0, 2.0, 0.7, 0.3]);
        let model = FayHerriotModel::new(x, d).unwrap();
        let w = DMatrix::from_column_slice(k, 1, &[1.0, 2.0, 0.5, 1.0, 3.0]);
        let q = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0, 3.0, 1.5, 0.5]));
        let spec = BenchmarkSpec::new(w.clone(), q, Target::WeightedDirect).unwrap();
        let basis = build_basis(&spec).unwrap();
        let anchor = w.transpose() * sym_power(spec.q(), -0.5).unwrap() * basis.h2.transpose();
        let t0 = &anchor * DVector::from_element(1, 1.0);
        let fixed = spec.with_target(Target::Fixed(t0.iter().copied().collect()));
        let design = CanonicalDesign::new(&model, &fixed, basis).unwrap();
        assert!((design.xi0.unwrap()[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rotation_must_be_orthogonal() {
        let k = 3;
        let spec = BenchmarkSpec::new(
            DMatrix::from_element(k, 1, 1.0),
            DMatrix::identity(k, k),
            Target::WeightedDirect,
        )
        .unwrap();
        let basis = build_basis(&spec).unwrap();
        let bad = DMatrix::from_element(2, 2, 1.0);
        assert!(basis.rotated(&bad, &DMatrix::identity(1, 1)).is_err());
        let c = std::f64::consts::FRAC_1_SQRT_2;
        let rot = DMatrix::from_row_slice(2, 2, &[c, -c, c, c]);
        let rotated = basis
            .rotated(&rot, &DMatrix::from_element(1, 1, -1.0))
            .unwrap();
        let h = rotated.h();
        assert!((&h * h.transpose() - DMatrix::identity(k, k)).norm() < 1e-12);
    }

    #[test]
    fn rank_deficient_x4_is_named() {
        // X lies in the span of W, so H1 Q^{1/2} X = 0.
        let k = 4;
        let w = DMatrix::from_column_slice(k, 1, &[1.0, 2.0, 3.0, 4.0]);
        let model = FayHerriotModel::new(w.clone(), DVector::from_element(k, 1.0)).unwrap();
        let spec = BenchmarkSpec::new(w, DMatrix::identity(k, k), Target::WeightedDirect).unwrap();
        let err = CanonicalDesign::new(&model, &spec, build_basis(&spec).unwrap()).unwrap_err();
        assert!(err.to_string().contains("rank p"), "{err}");
    }
}
