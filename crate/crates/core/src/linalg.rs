//! Small dense symmetric-matrix utilities.
//!
//! Everything in this crate works with matrices of dimension below ~20, so the
//! routines favour exact O(d³) algorithms: a symmetric eigendecomposition backs
//! the pseudo-inverse and the square root, and the Cholesky factorization is the
//! plain outer-product form extended to semidefinite inputs.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Slack multiplier applied to `dim * eps` when deciding whether a negative
/// eigenvalue is rounding noise.
const PSD_SLACK: f64 = 64.0;

/// A dense real symmetric matrix. Entries are stored symmetrically.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    /// Wraps a matrix that is exactly symmetric.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() || m.nrows() == 0 {
            return Err(Error::Dimension(format!(
                "expected a non-empty square matrix, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        check_finite(&m)?;
        for i in 0..m.nrows() {
            for j in 0..i {
                if m[(i, j)] != m[(j, i)] {
                    return Err(Error::InvalidInput(format!(
                        "matrix is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(Self(m))
    }

    /// Averages `m` with its transpose. Used for products that are symmetric
    /// only up to rounding.
    pub fn symmetrized(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() || m.nrows() == 0 {
            return Err(Error::Dimension(format!(
                "expected a non-empty square matrix, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        check_finite(&m)?;
        let t = m.transpose();
        Ok(Self((m + t) * 0.5))
    }

    pub fn identity(dim: usize) -> Self {
        Self(DMatrix::identity(dim, dim))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(DMatrix::zeros(dim, dim))
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        Self(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    pub fn scalar(v: f64) -> Self {
        Self(DMatrix::from_element(1, 1, v))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    /// Eigenvalues in ascending order together with the matching eigenvectors
    /// as columns.
    pub fn eigen(&self) -> (Vec<f64>, DMatrix<f64>) {
        let eig = SymmetricEigen::new(self.0.clone());
        let mut order: Vec<usize> = (0..self.dim()).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        let vectors = DMatrix::from_fn(self.dim(), self.dim(), |r, c| eig.eigenvectors[(r, order[c])]);
        (values, vectors)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigen().0[0]
    }

    pub fn max_abs_eigenvalue(&self) -> f64 {
        self.eigen().0.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
    }

    /// Ratio of the largest to the smallest absolute eigenvalue.
    pub fn condition_number(&self) -> f64 {
        let (values, _) = self.eigen();
        let max = values.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
        let min = values.iter().fold(f64::INFINITY, |acc, v| acc.min(v.abs()));
        if max == 0.0 {
            f64::INFINITY
        } else {
            max / min
        }
    }

    pub fn is_psd(&self) -> bool {
        let (values, _) = self.eigen();
        let scale = values.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
        values[0] >= -psd_tolerance(self.dim()) * scale
    }

    /// True when the smallest eigenvalue exceeds the numerical-rank cutoff.
    pub fn is_positive_definite(&self) -> bool {
        let (values, _) = self.eigen();
        let scale = values.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
        scale > 0.0 && values[0] > default_rank_tol(self.dim()) * scale
    }
}

impl std::ops::Index<(usize, usize)> for SymMatrix {
    type Output = f64;
    fn index(&self, idx: (usize, usize)) -> &f64 {
        &self.0[idx]
    }
}

/// Relative singular-value cutoff `dim * eps`.
pub fn default_rank_tol(dim: usize) -> f64 {
    dim.max(1) as f64 * f64::EPSILON
}

fn psd_tolerance(dim: usize) -> f64 {
    PSD_SLACK * default_rank_tol(dim)
}

fn check_finite(m: &DMatrix<f64>) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidMatrix)
    }
}

fn rebuild(values: &[f64], vectors: &DMatrix<f64>) -> DMatrix<f64> {
    let d = DMatrix::from_diagonal(&DVector::from_column_slice(values));
    vectors * d * vectors.transpose()
}

/// Moore–Penrose pseudo-inverse. Eigenvalues with `|λ| <= rank_tol * max|λ|`
/// are treated as zero.
pub fn pinv(a: &SymMatrix, rank_tol: f64) -> Result<SymMatrix> {
    if !(rank_tol >= 0.0) {
        return Err(Error::InvalidInput(format!("rank_tol must be >= 0, got {rank_tol}")));
    }
    check_finite(&a.0)?;
    let (values, vectors) = a.eigen();
    let cutoff = rank_tol * values.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
    let inv: Vec<f64> = values
        .iter()
        .map(|&v| if v.abs() <= cutoff || v == 0.0 { 0.0 } else { 1.0 / v })
        .collect();
    SymMatrix::symmetrized(rebuild(&inv, &vectors))
}

/// Pseudo-inverse with the default cutoff.
pub fn pinv_default(a: &SymMatrix) -> Result<SymMatrix> {
    pinv(a, default_rank_tol(a.dim()))
}

/// Symmetric PSD square root. Negative eigenvalues within rounding tolerance
/// are clamped to zero.
pub fn sym_sqrt(a: &SymMatrix) -> Result<SymMatrix> {
    check_finite(&a.0)?;
    let (values, vectors) = a.eigen();
    let scale = values.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
    let tol = psd_tolerance(a.dim()) * scale;
    if values[0] < -tol {
        return Err(Error::NotPsd { eigenvalue: values[0] });
    }
    let roots: Vec<f64> = values.iter().map(|&v| v.max(0.0).sqrt()).collect();
    SymMatrix::symmetrized(rebuild(&roots, &vectors))
}

/// Inverse of a nonsingular symmetric matrix.
pub fn inverse(a: &SymMatrix) -> Result<SymMatrix> {
    check_finite(&a.0)?;
    let (values, vectors) = a.eigen();
    let scale = values.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
    let cutoff = default_rank_tol(a.dim()) * scale;
    if scale == 0.0 || values.iter().any(|v| v.abs() <= cutoff) {
        return Err(Error::SingularCovariance(format!(
            "eigenvalues {values:?} fall below the rank cutoff {cutoff:e}"
        )));
    }
    let inv: Vec<f64> = values.iter().map(|v| 1.0 / v).collect();
    SymMatrix::symmetrized(rebuild(&inv, &vectors))
}

/// Lower-triangular `L` with `L Lᵀ = a`.
///
/// Semidefinite inputs are accepted: a pivot that is zero up to rounding
/// produces a zero column, provided the rest of that column of the Schur
/// complement is zero as well.
pub fn cholesky(a: &SymMatrix) -> Result<DMatrix<f64>> {
    check_finite(&a.0)?;
    let n = a.dim();
    let max_diag = (0..n).fold(0.0_f64, |acc, i| acc.max(a[(i, i)].abs()));
    let tol = psd_tolerance(n) * max_diag;
    let off_tol = (tol * max_diag).sqrt() * 8.0;
    let mut l = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut pivot = a[(j, j)];
        for k in 0..j {
            pivot -= l[(j, k)] * l[(j, k)];
        }
        if pivot < -tol {
            return Err(Error::NotPsd { eigenvalue: pivot });
        }
        if pivot <= tol {
            for i in (j + 1)..n {
                let mut s = a[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                if s.abs() > off_tol {
                    return Err(Error::NotPsd { eigenvalue: pivot });
                }
            }
            continue;
        }
        let d = pivot.sqrt();
        l[(j, j)] = d;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / d;
        }
    }
    Ok(l)
}

/// Largest absolute entry.
pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mp_defects(a: &DMatrix<f64>, p: &DMatrix<f64>) -> [f64; 4] {
        let apa = a * p * a;
        let pap = p * a * p;
        let ap = a * p;
        let pa = p * a;
        [
            max_abs(&(apa - a)),
            max_abs(&(pap - p)),
            max_abs(&(ap.transpose() - &ap)),
            max_abs(&(pa.transpose() - &pa)),
        ]
    }

    #[test]
    fn pinv_of_identity_and_zero() {
        let p = pinv_default(&SymMatrix::identity(3)).unwrap();
        assert_eq!(p.as_matrix(), &DMatrix::<f64>::identity(3, 3));
        let z = pinv_default(&SymMatrix::zeros(2)).unwrap();
        assert_eq!(z.as_matrix(), &DMatrix::<f64>::zeros(2, 2));
    }

    #[test]
    fn pinv_of_rank_deficient_diagonal() {
        let a = SymMatrix::from_diagonal(&[2.0, 0.0]);
        let p = pinv_default(&a).unwrap();
        assert!((p[(0, 0)] - 0.5).abs() < 1e-15);
        assert_eq!(p[(1, 1)], 0.0);
        assert!(mp_defects(a.as_matrix(), p.as_matrix()).iter().all(|&d| d < 1e-15));
    }

    #[test]
    fn pinv_rejects_non_finite() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, f64::NAN, f64::NAN, 1.0]);
        assert!(matches!(SymMatrix::new(m), Err(Error::InvalidMatrix)));
    }

    #[test]
    fn sqrt_examples() {
        let s = sym_sqrt(&SymMatrix::from_diagonal(&[4.0, 0.0])).unwrap();
        assert!((s[(0, 0)] - 2.0).abs() < 1e-15 && s[(1, 1)].abs() < 1e-15);
        let s = sym_sqrt(&SymMatrix::identity(4)).unwrap();
        assert!(max_abs(&(s.as_matrix() - DMatrix::<f64>::identity(4, 4))) < 1e-15);
    }

    #[test]
    fn sqrt_rejects_indefinite() {
        let a = SymMatrix::from_diagonal(&[1.0, -0.5]);
        assert!(matches!(sym_sqrt(&a), Err(Error::NotPsd { .. })));
    }

    #[test]
    fn cholesky_examples() {
        assert_eq!(cholesky(&SymMatrix::identity(2)).unwrap(), DMatrix::<f64>::identity(2, 2));
        assert_eq!(cholesky(&SymMatrix::scalar(9.0)).unwrap()[(0, 0)], 3.0);
        let a = SymMatrix::new(DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0])).unwrap();
        let l = cholesky(&a).unwrap();
        assert!(max_abs(&(&l * l.transpose() - a.as_matrix())) <= 1e-12);
        assert_eq!(l[(0, 1)], 0.0);
    }

    #[test]
    fn cholesky_semidefinite_and_indefinite() {
        // rank one: v vᵀ with v = (1, 2, 0)
        let a = SymMatrix::new(DMatrix::from_row_slice(
            3,
            3,
            &[1.0, 2.0, 0.0, 2.0, 4.0, 0.0, 0.0, 0.0, 0.0],
        ))
        .unwrap();
        let l = cholesky(&a).unwrap();
        assert!(max_abs(&(&l * l.transpose() - a.as_matrix())) <= 1e-12);

        let bad = SymMatrix::new(DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0])).unwrap();
        assert!(matches!(cholesky(&bad), Err(Error::NotPsd { .. })));
        let bad = SymMatrix::new(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 1.0])).unwrap();
        assert!(matches!(cholesky(&bad), Err(Error::NotPsd { .. })));
    }

    #[test]
    fn inverse_flags_singular() {
        assert!(matches!(
            inverse(&SymMatrix::from_diagonal(&[1.0, 0.0])),
            Err(Error::SingularCovariance(_))
        ));
        let inv = inverse(&SymMatrix::from_diagonal(&[4.0, 0.5])).unwrap();
        assert!((inv[(0, 0)] - 0.25).abs() < 1e-15 && (inv[(1, 1)] - 2.0).abs() < 1e-15);
    }

    fn random_psd(dim: usize, rank: usize, entries: &[f64]) -> DMatrix<f64> {
        let g = DMatrix::from_fn(dim, rank, |i, j| entries[(i * rank + j) % entries.len()]);
        &g * g.transpose()
    }

    proptest! {
        #[test]
        fn sqrt_squares_back(dim in 1usize..7, rank in 1usize..7,
                             entries in prop::collection::vec(-3.0f64..3.0, 49)) {
            let a = SymMatrix::symmetrized(random_psd(dim, rank.min(dim), &entries)).unwrap();
            let s = sym_sqrt(&a).unwrap();
            let scale = max_abs(a.as_matrix()).max(1e-300);
            prop_assert!(max_abs(&(s.as_matrix() * s.as_matrix() - a.as_matrix())) <= 1e-10 * scale);
        }

        #[test]
        fn pinv_involution_for_full_rank(dim in 1usize..6,
                                         entries in prop::collection::vec(-3.0f64..3.0, 36)) {
            let m = random_psd(dim, dim, &entries) + DMatrix::<f64>::identity(dim, dim);
            let a = SymMatrix::symmetrized(m).unwrap();
            let back = pinv_default(&pinv_default(&a).unwrap()).unwrap();
            let scale = max_abs(a.as_matrix());
            prop_assert!(max_abs(&(back.as_matrix() - a.as_matrix())) <= 1e-10 * scale * a.condition_number());
        }

        #[test]
        fn sqrt_of_pinv_squares_to_pinv(dim in 1usize..7, rank in 1usize..7,
                                        entries in prop::collection::vec(-3.0f64..3.0, 49)) {
            let a = SymMatrix::symmetrized(random_psd(dim, rank.min(dim), &entries)).unwrap();
            let p = pinv_default(&a).unwrap();
            let s = sym_sqrt(&p).unwrap();
            let scale = max_abs(p.as_matrix()).max(1e-300);
            prop_assert!(max_abs(&(s.as_matrix() * s.as_matrix() - p.as_matrix())) <= 1e-10 * scale);
        }
    }
}
