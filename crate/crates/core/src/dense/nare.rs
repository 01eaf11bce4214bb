//! Newton's method for small dense algebraic Riccati equations
//! `-A X - X D + X S X + Q = 0`.

use super::solve_sylvester;
use crate::error::{NdreError, Result};
use crate::Matrix;

#[derive(Debug, Clone)]
pub struct NewtonOutcome {
    pub x: Matrix,
    pub iterations: usize,
    pub converged: bool,
    /// Frobenius norm of the Riccati residual at the returned iterate.
    pub residual: f64,
    /// The update stopped contracting at a level below `STAGNATION_LEVEL`
    /// (rounding floor) before reaching `tol`.
    pub stagnated: bool,
    /// Last relative update `|X+ - X|_F / |X|_F`.
    pub last_change: f64,
}

/// Relative update size below which a non-contracting Newton iteration is
/// taken to have reached its rounding floor.
pub const STAGNATION_LEVEL: f64 = 1e-8;

pub(crate) fn nare_residual(a: &Matrix, d: &Matrix, s: &Matrix, q: &Matrix, x: &Matrix) -> Matrix {
    -(a * x) - x * d + x * (s * x) + q
}

/// Each iterate solves `(A - X S) X+ + X+ (D - S X) = Q - X S X`.
/// Stops when `|X+ - X|_F < tol |X|_F`, or, flagged as stagnated and not
/// converged, when the update no longer halves and is already below
/// `STAGNATION_LEVEL` relative.
pub fn solve_small_nare_newton(
    a: &Matrix,
    d: &Matrix,
    s: &Matrix,
    q: &Matrix,
    x_init: &Matrix,
    tol: f64,
    itermax: usize,
) -> Result<NewtonOutcome> {
    let (n, p) = (a.nrows(), d.nrows());
    if a.ncols() != n || d.ncols() != p || s.shape() != (p, n) || q.shape() != (n, p) || x_init.shape() != (n, p) {
        return Err(NdreError::Dimension(format!(
            "NARE with A {:?}, D {:?}, S {:?}, Q {:?}, X0 {:?}",
            a.shape(),
            d.shape(),
            s.shape(),
            q.shape(),
            x_init.shape()
        )));
    }
    let mut x = x_init.clone();
    let mut prev = f64::INFINITY;
    for it in 1..=itermax {
        let xs = &x * s;
        let sx = s * &x;
        let al = a - &xs;
        let dl = d - &sx;
        let rhs = q - &xs * &x;
        let next = solve_sylvester(&al, &dl, &rhs)?;
        let diff = (&next - &x).norm();
        let base = x.norm();
        let base = if base > 0.0 { base } else { next.norm() };
        x = next;
        let converged = diff == 0.0 || diff < tol * base;
        let stagnated = !converged && diff > 0.5 * prev && diff < STAGNATION_LEVEL * base;
        if converged || stagnated {
            let residual = nare_residual(a, d, s, q, &x).norm();
            return Ok(NewtonOutcome {
                x,
                iterations: it,
                converged,
                residual,
                stagnated,
                last_change: if base > 0.0 { diff / base } else { diff },
            });
        }
        prev = diff;
    }
    Err(NdreError::NoConvergence {
        what: "Newton iteration for the algebraic Riccati equation",
        iterations: itermax,
        residual: nare_residual(a, d, s, q, &x).norm(),
    })
}
