use crate::error::{NdreError, Result};
use crate::Matrix;

/// The quadratic coefficient `S` (p x n), dense or as `left * right^T`.
#[derive(Debug, Clone)]
pub enum CouplingMatrix {
    Dense(Matrix),
    Factored { left: Matrix, right: Matrix },
}

impl CouplingMatrix {
    pub fn factored(left: Matrix, right: Matrix) -> Result<Self> {
        if left.ncols() != right.ncols() {
            return Err(NdreError::Dimension(format!(
                "coupling factors with {} and {} columns",
                left.ncols(),
                right.ncols()
            )));
        }
        Ok(CouplingMatrix::Factored { left, right })
    }

    /// Number of rows `p`.
    pub fn nrows(&self) -> usize {
        match self {
            CouplingMatrix::Dense(m) => m.nrows(),
            CouplingMatrix::Factored { left, .. } => left.nrows(),
        }
    }

    /// Number of columns `n`.
    pub fn ncols(&self) -> usize {
        match self {
            CouplingMatrix::Dense(m) => m.ncols(),
            CouplingMatrix::Factored { right, .. } => right.nrows(),
        }
    }

    /// `S x` for `x` with n rows.
    pub fn apply(&self, x: &Matrix) -> Matrix {
        match self {
            CouplingMatrix::Dense(m) => m * x,
            CouplingMatrix::Factored { left, right } => left * right.tr_mul(x),
        }
    }

    /// `S^T y` for `y` with p rows.
    pub fn apply_transpose(&self, y: &Matrix) -> Matrix {
        match self {
            CouplingMatrix::Dense(m) => m.tr_mul(y),
            CouplingMatrix::Factored { left, right } => right * left.tr_mul(y),
        }
    }

    pub fn to_dense(&self) -> Matrix {
        match self {
            CouplingMatrix::Dense(m) => m.clone(),
            CouplingMatrix::Factored { left, right } => left * right.transpose(),
        }
    }

    /// `W^T S V`.
    pub fn project(&self, w: &Matrix, v: &Matrix) -> Matrix {
        match self {
            CouplingMatrix::Dense(m) => w.tr_mul(&(m * v)),
            CouplingMatrix::Factored { left, right } => w.tr_mul(left) * right.tr_mul(v),
        }
    }

    pub fn scaled(&self, c: f64) -> CouplingMatrix {
        match self {
            CouplingMatrix::Dense(m) => CouplingMatrix::Dense(m * c),
            CouplingMatrix::Factored { left, right } => CouplingMatrix::Factored {
                left: left * c,
                right: right.clone(),
            },
        }
    }

    pub fn norm2(&self) -> f64 {
        match self {
            CouplingMatrix::Dense(m) => crate::dense::norm2(m),
            CouplingMatrix::Factored { left, right } => crate::LowRankFactorPair::new(left.clone(), right.clone())
                .map(|f| f.spectral_norm())
                .unwrap_or(f64::NAN),
        }
    }
}
