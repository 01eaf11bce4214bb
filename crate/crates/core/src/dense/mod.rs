//! Small dense kernels: Schur forms, Sylvester solver, matrix exponential,
//! Newton for small algebraic Riccati equations, truncated SVD.

mod expm;
mod nare;
mod schur;
mod svd;
mod sylvester;

pub use expm::matrix_exponential;
pub use nare::{solve_small_nare_newton, NewtonOutcome, STAGNATION_LEVEL};
pub use schur::{complex_schur, real_schur, ComplexSchur, RealSchur};
pub use svd::{svd_sorted, truncated_svd_factor};
pub use sylvester::{solve_sylvester, solve_sylvester_schur, SylvesterSchur};

use crate::error::{NdreError, Result};
use crate::Matrix;

pub(crate) fn ensure_finite(m: &Matrix, what: &'static str) -> Result<()> {
    if m.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(NdreError::NonFinite(what))
    }
}

/// Induced 1-norm (maximum absolute column sum).
pub fn norm1(m: &Matrix) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Spectral norm via singular values.
pub fn norm2(m: &Matrix) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone()
        .try_svd(false, false, f64::EPSILON, 0)
        .map(|s| s.singular_values.max())
        .unwrap_or_else(|| m.norm())
}

/// Dense LU solve `a x = b`.
pub fn lu_solve(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.nrows() != a.ncols() || a.nrows() != b.nrows() {
        return Err(NdreError::Dimension(format!(
            "lu_solve: {}x{} with rhs {}x{}",
            a.nrows(),
            a.ncols(),
            b.nrows(),
            b.ncols()
        )));
    }
    let lu = a.clone().lu();
    lu.solve(b)
        .filter(|x| x.iter().all(|v| v.is_finite()))
        .ok_or_else(|| NdreError::Singular("dense LU".into()))
}

/// Triangular factor of a thin QR.
pub(crate) fn thin_r(m: &Matrix) -> Matrix {
    if m.ncols() == 0 || m.nrows() == 0 {
        return Matrix::zeros(m.ncols().min(m.nrows()), m.ncols());
    }
    m.clone().qr().r()
}
