//! Small dense linear-algebra helpers shared by the GP and feasibility code.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use thiserror::Error;

/// Symmetry tolerance, relative to the largest entry magnitude.
pub const SYMMETRY_TOL: f64 = 1e-10;

/// Eigenvalues above this (negative) floor are clamped to zero when taking roots.
pub const EIGEN_CLAMP: f64 = -1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    Asymmetric(f64),
    #[error("matrix has eigenvalue {0:e} below the PSD clamp")]
    NotPsd(f64),
    #[error("matrix contains non-finite entries")]
    NonFinite,
}

fn scale_of(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs())).max(1.0)
}

/// Largest `|m_ij - m_ji|`.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0_f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

fn check_symmetric(m: &DMatrix<f64>) -> Result<(), LinalgError> {
    if m.nrows() != m.ncols() {
        return Err(LinalgError::NotSquare {
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(LinalgError::NonFinite);
    }
    let asym = asymmetry(m);
    if asym > SYMMETRY_TOL * scale_of(m) {
        return Err(LinalgError::Asymmetric(asym));
    }
    Ok(())
}

/// Exact symmetrization `(m + m^T) / 2`.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Symmetric PSD square root `R` with `R^T R = R R = m`.
///
/// Uses the symmetric eigendecomposition; eigenvalues in `[EIGEN_CLAMP, 0)`
/// (relative to the matrix scale) are treated as zero.
pub fn sqrt_psd(m: &DMatrix<f64>) -> Result<DMatrix<f64>, LinalgError> {
    check_symmetric(m)?;
    let eig = SymmetricEigen::new(symmetrize(m));
    let floor = EIGEN_CLAMP * scale_of(m);
    let mut roots = DVector::zeros(eig.eigenvalues.len());
    for (i, &lam) in eig.eigenvalues.iter().enumerate() {
        if lam < floor {
            return Err(LinalgError::NotPsd(lam));
        }
        roots[i] = lam.max(0.0).sqrt();
    }
    let q = &eig.eigenvectors;
    let r = q * DMatrix::from_diagonal(&roots) * q.transpose();
    Ok(symmetrize(&r))
}

/// Minimum eigenvalue of a symmetric matrix together with a unit eigenvector.
pub fn min_eigenpair(m: &DMatrix<f64>) -> Result<(f64, DVector<f64>), LinalgError> {
    check_symmetric(m)?;
    let eig = SymmetricEigen::new(symmetrize(m));
    let (idx, lam) =
        eig.eigenvalues.iter().copied().enumerate().fold(
            (0, f64::INFINITY),
            |best, (i, v)| if v < best.1 { (i, v) } else { best },
        );
    let mut v = eig.eigenvectors.column(idx).into_owned();
    let norm = v.norm();
    v /= norm;
    Ok((lam, v))
}

/// All eigenvalues in ascending order.
pub fn eigenvalues_sorted(m: &DMatrix<f64>) -> Result<Vec<f64>, LinalgError> {
    check_symmetric(m)?;
    let eig = SymmetricEigen::new(symmetrize(m));
    let mut vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    vals.sort_by(f64::total_cmp);
    Ok(vals)
}
