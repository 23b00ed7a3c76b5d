//! Small dense helpers shared across modules.

use nalgebra::{DMatrix, DVector};

/// `(I - X)^{-1}` for a nilpotent `X` with `X^{degree + 1} = 0`, as the
/// finite sum `I + X + ... + X^degree` (Horner form).
pub(crate) fn nilpotent_resolvent(x: &DMatrix<f64>, degree: usize) -> DMatrix<f64> {
    let n = x.nrows();
    let eye = DMatrix::<f64>::identity(n, n);
    let mut acc = eye.clone();
    for _ in 0..degree {
        acc = &eye + x * &acc;
    }
    acc
}

/// `trace(Phiᵀ W Phi Sigma) = ‖W^{1/2} Phi Sigma^{1/2}‖_F²` without matrix square roots.
pub(crate) fn weighted_trace(phi: &DMatrix<f64>, weight: &DMatrix<f64>, sigma: &DMatrix<f64>) -> f64 {
    let left = weight * phi;
    let right = phi * sigma;
    left.component_mul(&right).sum()
}

/// `vᵀ Phiᵀ W Phi v = ‖W^{1/2} Phi v‖²`.
pub(crate) fn weighted_norm_sq(phi: &DMatrix<f64>, weight: &DMatrix<f64>, v: &DVector<f64>) -> f64 {
    let pv = phi * v;
    pv.dot(&(weight * &pv))
}

pub(crate) fn symmetric_min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    let sym = (m + m.transpose()) * 0.5;
    sym.symmetric_eigenvalues().min()
}

/// Largest absolute eigenvalue of a symmetric matrix (its spectral norm).
pub(crate) fn symmetric_spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    let sym = (m + m.transpose()) * 0.5;
    sym.symmetric_eigenvalues().amax()
}

/// Column-stacking `vec(K)`.
pub(crate) fn vec_columns(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

pub(crate) fn unvec_columns(v: &DVector<f64>, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_column_slice(rows, cols, v.as_slice())
}

pub(crate) fn block_diag(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), (b.nrows(), b.ncols())).copy_from(b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

pub(crate) fn is_symmetric(m: &DMatrix<f64>, tol: f64) -> bool {
    m.is_square() && (m - m.transpose()).amax() <= tol * m.amax().max(1.0)
}
