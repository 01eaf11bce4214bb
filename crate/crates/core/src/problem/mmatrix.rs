use crate::dense::real_schur;
use crate::error::{NdreError, Result};
use crate::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum MMatrixClass {
    NonsingularM,
    SingularM,
    NotM,
}

/// Classify `L = s I - H` with `s = max_i L_ii`, comparing `s` against the
/// spectral radius of `H` at relative tolerance 1e-12.
pub fn validate_m_matrix(l: &Matrix) -> Result<MMatrixClass> {
    let n = l.nrows();
    if l.ncols() != n {
        return Err(NdreError::Dimension(format!(
            "M-matrix test on a {}x{} matrix",
            n,
            l.ncols()
        )));
    }
    if n > 2000 {
        return Err(NdreError::SizeGuard(format!(
            "M-matrix classification limited to n <= 2000, got {n}"
        )));
    }
    for j in 0..n {
        for i in 0..n {
            if i != j && l[(i, j)] > 0.0 {
                return Ok(MMatrixClass::NotM);
            }
        }
    }
    let s = (0..n).map(|i| l[(i, i)]).fold(f64::NEG_INFINITY, f64::max);
    let h = Matrix::identity(n, n) * s - l;
    let rho = real_schur(&h)?
        .eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max);
    let tol = 1e-12 * s.abs().max(f64::MIN_POSITIVE);
    Ok(if (s - rho).abs() <= tol {
        MMatrixClass::SingularM
    } else if s > rho {
        MMatrixClass::NonsingularM
    } else {
        MMatrixClass::NotM
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{transport_m_matrix, TransportParams};

    #[test]
    fn identity_is_nonsingular() {
        assert_eq!(
            validate_m_matrix(&Matrix::identity(4, 4)).unwrap(),
            MMatrixClass::NonsingularM
        );
    }

    #[test]
    fn laplacian_is_singular() {
        let l = Matrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]);
        assert_eq!(validate_m_matrix(&l).unwrap(), MMatrixClass::SingularM);
    }

    #[test]
    fn positive_offdiagonal_is_not_m() {
        let l = Matrix::from_row_slice(2, 2, &[1.0, 0.5, -1.0, 1.0]);
        assert_eq!(validate_m_matrix(&l).unwrap(), MMatrixClass::NotM);
    }

    #[test]
    fn transport_matrix_is_nonsingular_m() {
        for n in [10, 40] {
            let m = transport_m_matrix(&TransportParams::new(n, 0.5, 0.5).unwrap()).unwrap();
            assert_eq!(validate_m_matrix(&m).unwrap(), MMatrixClass::NonsingularM);
        }
    }
}
