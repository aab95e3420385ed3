//! Symmetric-matrix numerics shared by every LMI in the crate.
//!
//! [`SymMat`] is the currency type: a dense real symmetric matrix whose
//! symmetry is enforced on construction by averaging `(M + Mᵀ)/2`.
//! Eigenvalue queries always go through a symmetric eigensolver.

use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative factor of the default PSD tolerance, see [`default_psd_tol`].
pub const PSD_REL_TOL: f64 = 1e-8;

/// Dense real symmetric matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DMatrix<f64>", into = "DMatrix<f64>")]
pub struct SymMat(DMatrix<f64>);

impl SymMat {
    /// Symmetrizes `m` as `(m + mᵀ)/2`. Rejects non-square, empty or
    /// non-finite input.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::dims(
                "SymMat::new",
                "square matrix",
                format!("{}x{}", m.nrows(), m.ncols()),
            ));
        }
        if m.nrows() == 0 {
            return Err(Error::InvalidInput("symmetric matrix must have dim >= 1".into()));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("matrix has non-finite entries".into()));
        }
        Ok(Self::symmetrized(m))
    }

    fn symmetrized(m: DMatrix<f64>) -> Self {
        let t = m.transpose();
        SymMat((m + t) * 0.5)
    }

    pub fn from_row_slice(dim: usize, data: &[f64]) -> Result<Self> {
        if data.len() != dim * dim {
            return Err(Error::dims("SymMat::from_row_slice", dim * dim, data.len()));
        }
        Self::new(DMatrix::from_row_slice(dim, dim, data))
    }

    pub fn identity(dim: usize) -> Self {
        assert!(dim >= 1, "symmetric matrix must have dim >= 1");
        SymMat(DMatrix::identity(dim, dim))
    }

    pub fn zeros(dim: usize) -> Self {
        assert!(dim >= 1, "symmetric matrix must have dim >= 1");
        SymMat(DMatrix::zeros(dim, dim))
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    /// `v vᵀ` for a column vector or `V Vᵀ` for a matrix.
    pub fn gram(v: &DMatrix<f64>) -> Self {
        Self::symmetrized(v * v.transpose())
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    pub fn scale(&self, factor: f64) -> Self {
        SymMat(&self.0 * factor)
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> DVector<f64> {
        let mut ev: Vec<f64> = self.0.clone().symmetric_eigenvalues().iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        DVector::from_vec(ev)
    }

    pub fn min_eig(&self) -> f64 {
        min_eig(self)
    }

    pub fn max_eig(&self) -> f64 {
        max_eig(self)
    }

    pub fn spectral_norm(&self) -> f64 {
        let ev = self.eigenvalues();
        ev[0].abs().max(ev[ev.len() - 1].abs())
    }

    /// Inverse of a positive definite matrix via Cholesky.
    pub fn spd_inverse(&self) -> Result<SymMat> {
        let chol = self.0.clone().cholesky().ok_or_else(|| Error::SingularBlock {
            min_eig: self.min_eig(),
        })?;
        Ok(Self::symmetrized(chol.inverse()))
    }

    /// Solves `self · X = rhs` for positive definite `self`.
    pub fn spd_solve(&self, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if rhs.nrows() != self.dim() {
            return Err(Error::dims("spd_solve", self.dim(), rhs.nrows()));
        }
        let chol = self.0.clone().cholesky().ok_or_else(|| Error::SingularBlock {
            min_eig: self.min_eig(),
        })?;
        Ok(chol.solve(rhs))
    }

    /// `xᵀ self⁻¹ x` for positive definite `self`, without forming the inverse.
    pub fn inv_quad_form(&self, x: &DVector<f64>) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::dims("inv_quad_form", self.dim(), x.len()));
        }
        let chol = self.0.clone().cholesky().ok_or_else(|| Error::SingularBlock {
            min_eig: self.min_eig(),
        })?;
        let y = chol.solve(x);
        Ok(x.dot(&y))
    }

    /// `xᵀ self x`.
    pub fn quad_form(&self, x: &DVector<f64>) -> f64 {
        x.dot(&(&self.0 * x))
    }
}

impl TryFrom<DMatrix<f64>> for SymMat {
    type Error = Error;

    fn try_from(m: DMatrix<f64>) -> Result<Self> {
        SymMat::new(m)
    }
}

impl From<SymMat> for DMatrix<f64> {
    fn from(m: SymMat) -> Self {
        m.0
    }
}

impl Add for &SymMat {
    type Output = SymMat;

    fn add(self, rhs: &SymMat) -> SymMat {
        SymMat(&self.0 + &rhs.0)
    }
}

impl Sub for &SymMat {
    type Output = SymMat;

    fn sub(self, rhs: &SymMat) -> SymMat {
        SymMat(&self.0 - &rhs.0)
    }
}

impl Neg for &SymMat {
    type Output = SymMat;

    fn neg(self) -> SymMat {
        SymMat(-&self.0)
    }
}

impl Mul<f64> for &SymMat {
    type Output = SymMat;

    fn mul(self, rhs: f64) -> SymMat {
        self.scale(rhs)
    }
}

/// Outcome of a positive-semidefiniteness query.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsdVerdict {
    pub is_psd: bool,
    pub min_eig: f64,
    pub tolerance: f64,
}

pub fn min_eig(m: &SymMat) -> f64 {
    m.eigenvalues()[0]
}

pub fn max_eig(m: &SymMat) -> f64 {
    let ev = m.eigenvalues();
    ev[ev.len() - 1]
}

/// `1e-8 · (1 + ‖M‖₂)`.
pub fn default_psd_tol(m: &SymMat) -> f64 {
    PSD_REL_TOL * (1.0 + m.spectral_norm())
}

/// `M ⪰ 0` up to `tol`: the verdict is positive iff `λ_min(M) ≥ -tol`.
pub fn is_psd(m: &SymMat, tol: f64) -> Result<PsdVerdict> {
    if !(tol >= 0.0) {
        return Err(Error::InvalidInput(format!("PSD tolerance must be >= 0, got {tol}")));
    }
    let min_eig = min_eig(m);
    Ok(PsdVerdict {
        is_psd: min_eig >= -tol,
        min_eig,
        tolerance: tol,
    })
}

/// [`is_psd`] with [`default_psd_tol`].
pub fn is_psd_default(m: &SymMat) -> PsdVerdict {
    let tol = default_psd_tol(m);
    let min_eig = min_eig(m);
    PsdVerdict {
        is_psd: min_eig >= -tol,
        min_eig,
        tolerance: tol,
    }
}

/// For `M = [[A, B], [Bᵀ, C]]` with `A` of size `split`, returns
/// `A − B C⁻¹ Bᵀ`. The trailing block `C` must be positive definite.
pub fn schur_complement(m: &SymMat, split: usize) -> Result<SymMat> {
    let n = m.dim();
    if split == 0 || split >= n {
        return Err(Error::dims("schur_complement split", format!("1..{n}"), split));
    }
    let a = m.0.view((0, 0), (split, split));
    let b = m.0.view((0, split), (split, n - split));
    let c = m.0.view((split, split), (n - split, n - split)).clone_owned();
    let chol = c.clone().cholesky().ok_or_else(|| Error::SingularBlock {
        min_eig: min_eig(&SymMat::symmetrized(c.clone())),
    })?;
    let cinv_bt = chol.solve(&b.transpose());
    Ok(SymMat::symmetrized(a.clone_owned() - b * cinv_bt))
}

/// Largest singular value; zero for an empty matrix.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().max()
}

pub fn trace(m: &SymMat) -> f64 {
    m.trace()
}

/// `Tᵀ M T`. Inertia is preserved when `T` is square and invertible.
pub fn congruence(m: &SymMat, t: &DMatrix<f64>) -> Result<SymMat> {
    if t.nrows() != m.dim() {
        return Err(Error::dims("congruence", m.dim(), t.nrows()));
    }
    Ok(SymMat::symmetrized(t.transpose() * &m.0 * t))
}

/// Largest eigenvalue modulus of a general square matrix.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    assert!(m.is_square(), "spectral radius needs a square matrix");
    if m.is_empty() {
        return 0.0;
    }
    m.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn sym(rows: &[&[f64]]) -> SymMat {
        let n = rows.len();
        let flat: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        SymMat::from_row_slice(n, &flat).unwrap()
    }

    #[test]
    fn min_eig_examples() {
        assert_relative_eq!(min_eig(&SymMat::identity(3)), 1.0, epsilon = 1e-14);
        assert_relative_eq!(min_eig(&SymMat::from_diagonal(&[2.0, 5.0]).unwrap()), 2.0, epsilon = 1e-14);
        // roots of (2-l)^2 - 1 are 1 and 3
        let m = sym(&[&[2.0, 1.0], &[1.0, 2.0]]);
        assert_relative_eq!(min_eig(&m), 1.0, epsilon = 1e-14);
        assert_relative_eq!(max_eig(&m), 3.0, epsilon = 1e-14);
    }

    #[test]
    fn construction_rejects_bad_input() {
        let nan = DMatrix::from_row_slice(2, 2, &[1.0, f64::NAN, 0.0, 1.0]);
        assert!(matches!(SymMat::new(nan), Err(Error::InvalidInput(_))));
        assert!(SymMat::new(DMatrix::zeros(2, 3)).is_err());
        assert!(SymMat::new(DMatrix::zeros(0, 0)).is_err());
    }

    #[test]
    fn construction_averages_asymmetry() {
        let m = SymMat::new(DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 4.0, 1.0])).unwrap();
        assert_eq!(m.get(0, 1), 3.0);
        assert_eq!(m.get(1, 0), 3.0);
    }

    #[test]
    fn psd_examples() {
        assert!(is_psd(&SymMat::identity(2), 1e-9).unwrap().is_psd);
        let v = is_psd(&SymMat::from_diagonal(&[1.0, -1e-3]).unwrap(), 1e-9).unwrap();
        assert!(!v.is_psd);
        assert_relative_eq!(v.min_eig, -1e-3);
        assert!(is_psd(&SymMat::zeros(4), 0.0).unwrap().is_psd);
        assert!(is_psd(&SymMat::identity(2), -1.0).is_err());
    }

    #[test]
    fn schur_examples() {
        let m = sym(&[&[2.0, 1.0], &[1.0, 1.0]]);
        let s = schur_complement(&m, 1).unwrap();
        assert_relative_eq!(s.get(0, 0), 1.0, epsilon = 1e-14);

        let a = sym(&[&[3.0, 1.0], &[1.0, 2.0]]);
        let mut bd = DMatrix::zeros(3, 3);
        bd.view_mut((0, 0), (2, 2)).copy_from(a.matrix());
        bd[(2, 2)] = 5.0;
        let s = schur_complement(&SymMat::new(bd).unwrap(), 2).unwrap();
        assert_relative_eq!(s.matrix(), a.matrix(), epsilon = 1e-14);

        let bad = sym(&[&[1.0, 0.0], &[0.0, -1.0]]);
        assert!(matches!(schur_complement(&bad, 1), Err(Error::SingularBlock { .. })));
        assert!(schur_complement(&bad, 0).is_err());
    }

    #[test]
    fn norm_trace_congruence_examples() {
        assert_relative_eq!(spectral_norm(&DMatrix::identity(3, 3)), 1.0, epsilon = 1e-14);
        assert_relative_eq!(trace(&SymMat::from_diagonal(&[1.0, 2.0, 3.0]).unwrap()), 6.0);

        // P⁻ᵀ P P⁻¹ = P⁻¹, with the 2x2 inverse written out explicitly
        let p = sym(&[&[4.0, 1.0], &[1.0, 3.0]]);
        let det = 4.0 * 3.0 - 1.0;
        let pinv = DMatrix::from_row_slice(2, 2, &[3.0 / det, -1.0 / det, -1.0 / det, 4.0 / det]);
        let c = congruence(&p, &pinv).unwrap();
        assert_relative_eq!(c.matrix(), &pinv, epsilon = 1e-14);
        assert!(congruence(&p, &DMatrix::identity(3, 3)).is_err());
    }

    #[test]
    fn spectral_radius_of_rotation_and_jordan() {
        let r = DMatrix::from_row_slice(2, 2, &[0.0, -0.5, 0.5, 0.0]);
        assert_relative_eq!(spectral_radius(&r), 0.5, epsilon = 1e-12);
        let j = DMatrix::from_row_slice(2, 2, &[0.9, 1.0, 0.0, 0.9]);
        assert_relative_eq!(spectral_radius(&j), 0.9, epsilon = 1e-6);
    }

    #[test]
    fn inverse_helpers_match() {
        let p = sym(&[&[4.0, 1.0], &[1.0, 3.0]]);
        let x = DVector::from_vec(vec![1.0, -2.0]);
        let inv = p.spd_inverse().unwrap();
        assert_relative_eq!(p.inv_quad_form(&x).unwrap(), inv.quad_form(&x), epsilon = 1e-14);
        assert!(SymMat::from_diagonal(&[1.0, 0.0]).unwrap().spd_inverse().is_err());
    }

    fn random_matrix(dim: usize) -> impl Strategy<Value = DMatrix<f64>> {
        prop::collection::vec(-2.0f64..2.0, dim * dim)
            .prop_map(move |v| DMatrix::from_vec(dim, dim, v))
    }

    fn spd(dim: usize) -> impl Strategy<Value = SymMat> {
        random_matrix(dim).prop_map(move |g| {
            SymMat::new(&g * g.transpose() + DMatrix::identity(dim, dim) * 0.1).unwrap()
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(128))]

        #[test]
        fn spd_is_psd_and_negation_is_not(m in (1usize..=6).prop_flat_map(spd)) {
            prop_assert!(is_psd(&m, 1e-9).unwrap().is_psd);
            prop_assert!(!is_psd(&-&m, 1e-9).unwrap().is_psd);
        }

        #[test]
        fn schur_of_psd_is_psd(
            (m, split) in (2usize..=6).prop_flat_map(|d| (spd(d), 1..d)),
        ) {
            let s = schur_complement(&m, split).unwrap();
            prop_assert!(is_psd(&s, default_psd_tol(&m)).unwrap().is_psd);
        }

        #[test]
        fn congruence_keeps_min_eig_sign(
            (m, t) in (1usize..=5).prop_flat_map(|d| (random_matrix(d), random_matrix(d))),
        ) {
            let m = SymMat::new(m).unwrap();
            let lm = min_eig(&m);
            let svals = t.singular_values();
            prop_assume!(svals.min() > 1e-3 && lm.abs() > 1e-3);
            let c = congruence(&m, &t).unwrap();
            prop_assert_eq!(min_eig(&c) > 0.0, lm > 0.0);
        }

        #[test]
        fn trace_is_eigenvalue_sum(m in (1usize..=6).prop_flat_map(random_matrix)) {
            let m = SymMat::new(m).unwrap();
            let s: f64 = m.eigenvalues().iter().sum();
            let scale = m.matrix().abs().sum().max(1.0);
            prop_assert!((trace(&m) - s).abs() <= 1e-10 * scale);
        }
    }
}
