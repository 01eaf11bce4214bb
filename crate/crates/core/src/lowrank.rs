//! Factored low-rank matrices `X = Z1 Z2^T`.

use crate::dense::{svd_sorted, thin_r};
use crate::error::{NdreError, Result};
use crate::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct LowRankFactorPair {
    pub z1: Matrix,
    pub z2: Matrix,
}

impl LowRankFactorPair {
    pub fn new(z1: Matrix, z2: Matrix) -> Result<Self> {
        if z1.ncols() != z2.ncols() {
            return Err(NdreError::Dimension(format!(
                "factor pair with inner dimensions {} and {}",
                z1.ncols(),
                z2.ncols()
            )));
        }
        Ok(LowRankFactorPair { z1, z2 })
    }

    pub fn zeros(n: usize, p: usize) -> Self {
        LowRankFactorPair {
            z1: Matrix::zeros(n, 0),
            z2: Matrix::zeros(p, 0),
        }
    }

    pub fn rank(&self) -> usize {
        self.z1.ncols()
    }

    pub fn nrows(&self) -> usize {
        self.z1.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.z2.nrows()
    }

    pub fn to_dense(&self) -> Matrix {
        if self.rank() == 0 {
            return Matrix::zeros(self.nrows(), self.ncols());
        }
        &self.z1 * self.z2.transpose()
    }

    /// Core `R1 R2^T` of the thin QR factorizations, same Frobenius and
    /// spectral norms as the product.
    fn core(&self) -> Matrix {
        let r1 = thin_r(&self.z1);
        let r2 = thin_r(&self.z2);
        r1 * r2.transpose()
    }

    /// `|Z1 Z2^T|_F` through thin QR of both factors. Unlike the Gram-trace
    /// formula this keeps full relative accuracy for differences of nearby
    /// iterates.
    pub fn frobenius_norm(&self) -> f64 {
        if self.rank() == 0 {
            return 0.0;
        }
        self.core().norm()
    }

    /// `sqrt(trace((Z1^T Z1)(Z2^T Z2)))`; cheap, but loses accuracy below
    /// about `sqrt(eps)` relative to the factor norms.
    pub fn gram_frobenius_norm(&self) -> f64 {
        if self.rank() == 0 {
            return 0.0;
        }
        let g1 = self.z1.transpose() * &self.z1;
        let g2 = self.z2.transpose() * &self.z2;
        g1.component_mul(&g2).sum().max(0.0).sqrt()
    }

    /// Spectral norm through the QR core.
    pub fn spectral_norm(&self) -> f64 {
        if self.rank() == 0 {
            return 0.0;
        }
        crate::dense::norm2(&self.core())
    }

    /// Factors of `self - other`.
    pub fn difference(&self, other: &LowRankFactorPair) -> Result<LowRankFactorPair> {
        if self.nrows() != other.nrows() || self.ncols() != other.ncols() {
            return Err(NdreError::Dimension(format!(
                "difference of {}x{} and {}x{} factored matrices",
                self.nrows(),
                self.ncols(),
                other.nrows(),
                other.ncols()
            )));
        }
        let z1 = hcat(&[&self.z1, &(-&other.z1)]);
        let z2 = hcat(&[&self.z2, &other.z2]);
        LowRankFactorPair::new(z1, z2)
    }

    /// `|self - other|_F / |other|_F` (absolute when `other` is zero).
    pub fn relative_difference(&self, other: &LowRankFactorPair) -> Result<f64> {
        let d = self.difference(other)?.frobenius_norm();
        let base = other.frobenius_norm();
        Ok(if base > 0.0 { d / base } else { d })
    }

    /// Recompress to the numerical rank, dropping singular values below
    /// `tol_rel * sigma_1`, and keeping at most `r_max` terms.
    pub fn compress(&self, tol_rel: f64, r_max: usize) -> Result<LowRankFactorPair> {
        let (n, p) = (self.nrows(), self.ncols());
        if self.rank() == 0 {
            return Ok(LowRankFactorPair::zeros(n, p));
        }
        let qr1 = self.z1.clone().qr();
        let qr2 = self.z2.clone().qr();
        let k1 = self.z1.ncols().min(n);
        let k2 = self.z2.ncols().min(p);
        let q1 = qr1.q().columns(0, k1).into_owned();
        let q2 = qr2.q().columns(0, k2).into_owned();
        let core = qr1.r() * qr2.r().transpose();
        let (u, s, v) = svd_sorted(&core)?;
        if s.is_empty() || s[0] == 0.0 {
            return Ok(LowRankFactorPair::zeros(n, p));
        }
        let cut = tol_rel * s[0];
        let r = s.iter().take_while(|&&x| x > cut).count().min(r_max);
        let mut w1 = u.columns(0, r).into_owned();
        let mut w2 = v.columns(0, r).into_owned();
        for j in 0..r {
            let w = s[j].sqrt();
            w1.column_mut(j).scale_mut(w);
            w2.column_mut(j).scale_mut(w);
        }
        LowRankFactorPair::new(q1 * w1, q2 * w2)
    }
}

/// Horizontal concatenation of blocks with equal row counts.
pub(crate) fn hcat(blocks: &[&Matrix]) -> Matrix {
    let rows = blocks.first().map(|b| b.nrows()).unwrap_or(0);
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = Matrix::zeros(rows, cols);
    let mut off = 0;
    for b in blocks {
        debug_assert_eq!(b.nrows(), rows);
        out.columns_mut(off, b.ncols()).copy_from(b);
        off += b.ncols();
    }
    out
}
