use nalgebra::{DMatrix, SymmetricEigen};
use thiserror::Error;

/// Inputs whose asymmetry exceeds this (relative to `max(1, max|m_ij|)`) are rejected.
pub const SYMMETRY_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Error, PartialEq)]
pub enum SqrtmError {
    #[error("matrix is {0}×{1}, expected square")]
    NotSquare(usize, usize),
    #[error("matrix is not symmetric (max |m - mᵀ| = {0:e})")]
    NotSymmetric(f64),
    #[error("matrix has non-finite entries")]
    NotFiniteInput,
}

/// Principal square root of a symmetric positive semidefinite matrix.
///
/// Symmetrizes the input, takes a symmetric eigendecomposition, clamps
/// negative eigenvalues to zero and rebuilds `V·diag(√λ)·Vᵀ`.
pub fn sqrtm_spd(m: &DMatrix<f64>) -> Result<DMatrix<f64>, SqrtmError> {
    let (rows, cols) = m.shape();
    if rows != cols {
        return Err(SqrtmError::NotSquare(rows, cols));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(SqrtmError::NotFiniteInput);
    }
    let scale = m.amax().max(1.0);
    let asym = (m - m.transpose()).amax();
    if asym > SYMMETRY_TOLERANCE * scale {
        return Err(SqrtmError::NotSymmetric(asym));
    }
    if rows == 0 {
        return Ok(m.clone());
    }

    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let min = eig.eigenvalues.min();
    if min < -1e-10 * scale {
        tracing::warn!(min_eigenvalue = min, "clamping negative eigenvalue in sqrtm_spd");
    }
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    let v = &eig.eigenvectors;
    let mut x = v * DMatrix::from_diagonal(&roots) * v.transpose();
    x = (&x + x.transpose()) * 0.5;
    Ok(x)
}
