use super::coupling::CouplingMatrix;
use super::operator::{LinearOperator, Operator};
use crate::error::{NdreError, Result};
use crate::lowrank::LowRankFactorPair;
use crate::Matrix;

/// `X' = -A X - X D + X S X + F G^T`, `X(0) = Z01 Z02^T`.
#[derive(Debug, Clone)]
pub struct NdreProblem {
    pub a: Operator,
    pub d: Operator,
    pub s: CouplingMatrix,
    pub f: Matrix,
    pub g: Matrix,
    pub x0: LowRankFactorPair,
    pub label: String,
    pub seed: Option<u64>,
}

/// Dense copies of all coefficients, for oracle-scale computations.
#[derive(Debug, Clone)]
pub struct DenseNdre {
    pub a: Matrix,
    pub d: Matrix,
    pub s: Matrix,
    pub q: Matrix,
    pub x0: Matrix,
}

/// Largest `n * p` (and operator dimension) that dense oracles accept unless
/// explicitly overridden.
pub const DENSE_GUARD: usize = 4_000_000;

impl NdreProblem {
    pub fn new(
        a: Operator,
        d: Operator,
        s: CouplingMatrix,
        f: Matrix,
        g: Matrix,
        x0: LowRankFactorPair,
    ) -> Result<Self> {
        let (n, p) = (a.dim(), d.dim());
        if s.nrows() != p || s.ncols() != n {
            return Err(NdreError::Dimension(format!(
                "S is {}x{}, expected {}x{}",
                s.nrows(),
                s.ncols(),
                p,
                n
            )));
        }
        if f.nrows() != n || g.nrows() != p || f.ncols() != g.ncols() {
            return Err(NdreError::Dimension(format!(
                "F is {}x{} and G is {}x{} for n = {}, p = {}",
                f.nrows(),
                f.ncols(),
                g.nrows(),
                g.ncols(),
                n,
                p
            )));
        }
        if f.ncols() > n.min(p) {
            return Err(NdreError::Dimension(format!(
                "rank of F G^T ({}) exceeds min(n, p) = {}",
                f.ncols(),
                n.min(p)
            )));
        }
        if x0.nrows() != n || x0.ncols() != p {
            return Err(NdreError::Dimension(format!(
                "initial factors describe a {}x{} matrix, expected {}x{}",
                x0.nrows(),
                x0.ncols(),
                n,
                p
            )));
        }
        crate::dense::ensure_finite(&f, "F")?;
        crate::dense::ensure_finite(&g, "G")?;
        Ok(NdreProblem {
            a,
            d,
            s,
            f,
            g,
            x0,
            label: String::from("custom"),
            seed: None,
        })
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn with_initial(mut self, x0: LowRankFactorPair) -> Result<Self> {
        if x0.nrows() != self.n() || x0.ncols() != self.p() {
            return Err(NdreError::Dimension("initial factors do not match the problem".into()));
        }
        self.x0 = x0;
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.a.dim()
    }

    pub fn p(&self) -> usize {
        self.d.dim()
    }

    /// Rank of the constant term factors.
    pub fn s_rank(&self) -> usize {
        self.f.ncols()
    }

    /// Factors of the constant term `Q = F G^T`.
    pub fn constant_term(&self) -> LowRankFactorPair {
        LowRankFactorPair {
            z1: self.f.clone(),
            z2: self.g.clone(),
        }
    }

    /// `|F G^T|_F` without forming the product.
    pub fn constant_term_norm(&self) -> f64 {
        self.constant_term().frobenius_norm()
    }

    /// Materialize all coefficients; refuses problems beyond `guard` entries.
    pub fn to_dense(&self, guard: usize) -> Result<DenseNdre> {
        let (n, p) = (self.n(), self.p());
        let size = (n + p) * (n + p);
        if size > guard {
            return Err(NdreError::SizeGuard(format!(
                "dense assembly of an n = {n}, p = {p} problem exceeds the guard of {guard} entries"
            )));
        }
        Ok(DenseNdre {
            a: self.a.to_dense(),
            d: self.d.to_dense(),
            s: self.s.to_dense(),
            q: self.constant_term().to_dense(),
            x0: self.x0.to_dense(),
        })
    }
}

impl DenseNdre {
    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn p(&self) -> usize {
        self.d.nrows()
    }

    /// Right-hand side `-A X - X D + X S X + Q`.
    pub fn rhs(&self, x: &Matrix) -> Matrix {
        -(&self.a * x) - x * &self.d + x * (&self.s * x) + &self.q
    }
}
