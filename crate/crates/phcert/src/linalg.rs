//! Small dense linear-algebra helpers shared across modules.
//!
//! The matrix norm used everywhere is the spectral (induced 2-) norm,
//! consistent with the eigenvalue bounds of the certificate.

use crate::{Error, MatF, Result, VecF};

/// Spectral norm (largest singular value).
pub fn spectral_norm(a: &MatF) -> f64 {
    if a.nrows() == 0 || a.ncols() == 0 {
        return 0.0;
    }
    a.clone().singular_values().max()
}

/// Symmetric part (A + A^T)/2.
pub fn sym_part(a: &MatF) -> MatF {
    (a + a.transpose()) * 0.5
}

/// Eigenvalues of a symmetric matrix, unordered.
fn sym_eigenvalues(a: &MatF) -> VecF {
    nalgebra::SymmetricEigen::new(sym_part(a)).eigenvalues
}

/// Minimum eigenvalue of the symmetric part of `a`.
pub fn min_eig_sym(a: &MatF) -> f64 {
    sym_eigenvalues(a).min()
}

/// Maximum eigenvalue of the symmetric part of `a`.
pub fn max_eig_sym(a: &MatF) -> f64 {
    sym_eigenvalues(a).max()
}

/// Residual of symmetry, ||A - A^T||.
pub fn symmetry_residual(a: &MatF) -> f64 {
    spectral_norm(&(a - a.transpose()))
}

/// Dense LU inverse with partial pivoting. Errors on singular input.
pub fn invert(a: &MatF) -> Result<MatF> {
    a.clone().try_inverse().ok_or(Error::SingularA)
}

/// Solve A x = b by LU with partial pivoting.
pub fn solve(a: &MatF, b: &VecF) -> Result<VecF> {
    a.clone()
        .lu()
        .solve(b)
        .ok_or_else(|| Error::Shape("singular linear system".into()))
}

/// Checks that `a` is symmetric within `tol` (absolute on the residual) and
/// that its minimum eigenvalue is at least `eig_floor`.
pub fn check_sym_with_floor(a: &MatF, tol: f64, eig_floor: f64) -> bool {
    symmetry_residual(a) <= tol && min_eig_sym(a) >= eig_floor
}
