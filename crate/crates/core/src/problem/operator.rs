//! Structured linear operators with forward, transpose and inverse actions.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::OnceLock;

use nalgebra::{Dyn, LU};

use crate::error::{NdreError, Result};
use crate::{Matrix, Vector};

pub trait LinearOperator: Send + Sync + std::fmt::Debug {
    fn dim(&self) -> usize;
    fn apply(&self, x: &Matrix) -> Matrix;
    fn apply_transpose(&self, x: &Matrix) -> Matrix;
    fn apply_inverse(&self, x: &Matrix) -> Result<Matrix>;
    fn apply_inverse_transpose(&self, x: &Matrix) -> Result<Matrix>;

    /// Whether inverse application is available at all.
    fn supports_inverse(&self) -> bool {
        true
    }

    fn to_dense(&self) -> Matrix {
        let n = self.dim();
        self.apply(&Matrix::identity(n, n))
    }
}

/// View of an operator as its transpose.
#[derive(Debug, Clone, Copy)]
pub struct Transposed<'a>(pub &'a dyn LinearOperator);

impl LinearOperator for Transposed<'_> {
    fn dim(&self) -> usize {
        self.0.dim()
    }
    fn apply(&self, x: &Matrix) -> Matrix {
        self.0.apply_transpose(x)
    }
    fn apply_transpose(&self, x: &Matrix) -> Matrix {
        self.0.apply(x)
    }
    fn apply_inverse(&self, x: &Matrix) -> Result<Matrix> {
        self.0.apply_inverse_transpose(x)
    }
    fn apply_inverse_transpose(&self, x: &Matrix) -> Result<Matrix> {
        self.0.apply_inverse(x)
    }
    fn supports_inverse(&self) -> bool {
        self.0.supports_inverse()
    }
}

fn check_rows(op: &str, n: usize, x: &Matrix) {
    assert_eq!(
        x.nrows(),
        n,
        "{op}: operand has {} rows, operator dimension is {n}",
        x.nrows()
    );
}

/// `diag(d) - u v^T`.
#[derive(Debug, Clone)]
pub struct DiagPlusRankOne {
    d: Vector,
    u: Vector,
    v: Vector,
    dinv_u: Vector,
    dinv_v: Vector,
    denom: f64,
}

impl DiagPlusRankOne {
    pub fn new(d: Vector, u: Vector, v: Vector) -> Result<Self> {
        let n = d.len();
        if u.len() != n || v.len() != n {
            return Err(NdreError::Dimension(format!(
                "diagonal-plus-rank-one with lengths {}, {}, {}",
                n,
                u.len(),
                v.len()
            )));
        }
        if d.iter().chain(u.iter()).chain(v.iter()).any(|x| !x.is_finite()) {
            return Err(NdreError::NonFinite("diagonal-plus-rank-one data"));
        }
        if let Some(i) = d.iter().position(|&x| x == 0.0) {
            return Err(NdreError::Singular(format!("zero diagonal entry at {i}")));
        }
        let dinv_u = u.component_div(&d);
        let dinv_v = v.component_div(&d);
        let vdu = v.dot(&dinv_u);
        let denom = 1.0 - vdu;
        if denom.abs() < 1e-14 * (1.0 + vdu.abs()) {
            return Err(NdreError::Singular(format!(
                "Sherman-Morrison denominator 1 - v^T diag(d)^-1 u = {denom:e}"
            )));
        }
        Ok(DiagPlusRankOne {
            d,
            u,
            v,
            dinv_u,
            dinv_v,
            denom,
        })
    }

    pub fn diagonal(&self) -> &Vector {
        &self.d
    }
    pub fn u(&self) -> &Vector {
        &self.u
    }
    pub fn v(&self) -> &Vector {
        &self.v
    }

    /// `scale * M + shift * I`.
    pub fn scaled_shift(&self, scale: f64, shift: f64) -> Result<Self> {
        DiagPlusRankOne::new(self.d.map(|x| scale * x + shift), &self.u * scale, self.v.clone())
    }

    fn diag_solve(&self, x: &Matrix) -> Matrix {
        let mut out = x.clone();
        for (i, mut row) in out.row_iter_mut().enumerate() {
            row /= self.d[i];
        }
        out
    }

    fn diag_mul(&self, x: &Matrix) -> Matrix {
        let mut out = x.clone();
        for (i, mut row) in out.row_iter_mut().enumerate() {
            row *= self.d[i];
        }
        out
    }
}

impl LinearOperator for DiagPlusRankOne {
    fn dim(&self) -> usize {
        self.d.len()
    }
    fn apply(&self, x: &Matrix) -> Matrix {
        check_rows("apply", self.dim(), x);
        let mut out = self.diag_mul(x);
        let vx = self.v.transpose() * x;
        out -= &self.u * vx;
        out
    }
    fn apply_transpose(&self, x: &Matrix) -> Matrix {
        check_rows("apply_transpose", self.dim(), x);
        let mut out = self.diag_mul(x);
        let ux = self.u.transpose() * x;
        out -= &self.v * ux;
        out
    }
    fn apply_inverse(&self, x: &Matrix) -> Result<Matrix> {
        check_rows("apply_inverse", self.dim(), x);
        let mut y = self.diag_solve(x);
        let coef = (self.v.transpose() * &y) / self.denom;
        y += &self.dinv_u * coef;
        Ok(y)
    }
    fn apply_inverse_transpose(&self, x: &Matrix) -> Result<Matrix> {
        check_rows("apply_inverse_transpose", self.dim(), x);
        let mut y = self.diag_solve(x);
        let coef = (self.u.transpose() * &y) / self.denom;
        y += &self.dinv_v * coef;
        Ok(y)
    }
}

/// Dense operator with lazily computed LU factors of `M` and `M^T`.
#[derive(Debug, Clone)]
pub struct DenseOperator {
    m: Matrix,
    lu: OnceLock<Option<LU<f64, Dyn, Dyn>>>,
    lu_t: OnceLock<Option<LU<f64, Dyn, Dyn>>>,
}

impl DenseOperator {
    pub fn new(m: Matrix) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(NdreError::Dimension(format!(
                "operator matrix must be square, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        crate::dense::ensure_finite(&m, "operator matrix")?;
        Ok(DenseOperator {
            m,
            lu: OnceLock::new(),
            lu_t: OnceLock::new(),
        })
    }

    pub fn matrix(&self) -> &Matrix {
        &self.m
    }

    fn factor(m: &Matrix) -> Option<LU<f64, Dyn, Dyn>> {
        let lu = m.clone().lu();
        let u = lu.u();
        let scale = m.iter().fold(0.0f64, |a, x| a.max(x.abs()));
        let tiny = f64::EPSILON * scale * m.nrows() as f64;
        if (0..u.nrows()).any(|i| u[(i, i)].abs() <= tiny) {
            None
        } else {
            Some(lu)
        }
    }

    fn solve_with(lu: &Option<LU<f64, Dyn, Dyn>>, x: &Matrix) -> Result<Matrix> {
        lu.as_ref()
            .and_then(|f| f.solve(x))
            .ok_or_else(|| NdreError::Singular("dense operator is singular".into()))
    }
}

impl LinearOperator for DenseOperator {
    fn dim(&self) -> usize {
        self.m.nrows()
    }
    fn apply(&self, x: &Matrix) -> Matrix {
        check_rows("apply", self.dim(), x);
        &self.m * x
    }
    fn apply_transpose(&self, x: &Matrix) -> Matrix {
        check_rows("apply_transpose", self.dim(), x);
        self.m.tr_mul(x)
    }
    fn apply_inverse(&self, x: &Matrix) -> Result<Matrix> {
        check_rows("apply_inverse", self.dim(), x);
        Self::solve_with(self.lu.get_or_init(|| Self::factor(&self.m)), x)
    }
    fn apply_inverse_transpose(&self, x: &Matrix) -> Result<Matrix> {
        check_rows("apply_inverse_transpose", self.dim(), x);
        Self::solve_with(self.lu_t.get_or_init(|| Self::factor(&self.m.transpose())), x)
    }
    fn supports_inverse(&self) -> bool {
        self.lu.get_or_init(|| Self::factor(&self.m)).is_some()
    }
    fn to_dense(&self) -> Matrix {
        self.m.clone()
    }
}

/// Square sparse matrix in compressed sparse row form.
#[derive(Debug, Clone)]
pub struct SparseOperator {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
    lu: OnceLock<std::result::Result<SparseLu, String>>,
}

impl SparseOperator {
    /// Build from (row, col, value) triplets; duplicates are summed.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let mut rows: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); n];
        for &(i, j, v) in triplets {
            if i >= n || j >= n {
                return Err(NdreError::Dimension(format!("entry ({i}, {j}) outside {n}x{n}")));
            }
            if !v.is_finite() {
                return Err(NdreError::NonFinite("sparse operator entry"));
            }
            *rows[i].entry(j).or_insert(0.0) += v;
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for r in rows {
            for (j, v) in r {
                if v != 0.0 {
                    col_idx.push(j);
                    values.push(v);
                }
            }
            row_ptr.push(col_idx.len());
        }
        Ok(SparseOperator {
            n,
            row_ptr,
            col_idx,
            values,
            lu: OnceLock::new(),
        })
    }

    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::with_capacity(self.values.len());
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                out.push((i, self.col_idx[k], self.values[k]));
            }
        }
        out
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn scaled_shift(&self, scale: f64, shift: f64) -> Result<Self> {
        let mut t: Vec<(usize, usize, f64)> = self.triplets().into_iter().map(|(i, j, v)| (i, j, scale * v)).collect();
        if shift != 0.0 {
            t.extend((0..self.n).map(|i| (i, i, shift)));
        }
        SparseOperator::from_triplets(self.n, &t)
    }

    fn factor(&self) -> &std::result::Result<SparseLu, String> {
        self.lu.get_or_init(|| SparseLu::factor(self.n, &self.triplets()))
    }
}

impl LinearOperator for SparseOperator {
    fn dim(&self) -> usize {
        self.n
    }
    fn apply(&self, x: &Matrix) -> Matrix {
        check_rows("apply", self.n, x);
        let mut out = Matrix::zeros(self.n, x.ncols());
        for c in 0..x.ncols() {
            for i in 0..self.n {
                let mut s = 0.0;
                for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                    s += self.values[k] * x[(self.col_idx[k], c)];
                }
                out[(i, c)] = s;
            }
        }
        out
    }
    fn apply_transpose(&self, x: &Matrix) -> Matrix {
        check_rows("apply_transpose", self.n, x);
        let mut out = Matrix::zeros(self.n, x.ncols());
        for c in 0..x.ncols() {
            for i in 0..self.n {
                let xi = x[(i, c)];
                for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                    out[(self.col_idx[k], c)] += self.values[k] * xi;
                }
            }
        }
        out
    }
    fn apply_inverse(&self, x: &Matrix) -> Result<Matrix> {
        check_rows("apply_inverse", self.n, x);
        match self.factor() {
            Ok(lu) => Ok(lu.solve(x)),
            Err(msg) => Err(NdreError::Singular(msg.clone())),
        }
    }
    fn apply_inverse_transpose(&self, x: &Matrix) -> Result<Matrix> {
        check_rows("apply_inverse_transpose", self.n, x);
        match self.factor() {
            Ok(lu) => Ok(lu.solve_transpose(x)),
            Err(msg) => Err(NdreError::Singular(msg.clone())),
        }
    }
    fn supports_inverse(&self) -> bool {
        self.factor().is_ok()
    }
}

/// Right-looking sparse LU with partial pivoting, natural column order.
/// Adequate for banded and nearly banded matrices.
#[derive(Debug, Clone)]
pub struct SparseLu {
    n: usize,
    /// pivot row (original index) for each elimination step
    piv: Vec<usize>,
    /// multipliers (row, l) applied at each step
    lower: Vec<Vec<(usize, f64)>>,
    /// row of U for each step, (column, value), diagonal first
    upper: Vec<Vec<(usize, f64)>>,
}

impl SparseLu {
    fn factor(n: usize, triplets: &[(usize, usize, f64)]) -> std::result::Result<Self, String> {
        let mut rows: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); n];
        let mut cols: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
        let mut scale = 0.0f64;
        for &(i, j, v) in triplets {
            rows[i].insert(j, v);
            cols[j].insert(i);
            scale = scale.max(v.abs());
        }
        let tiny = f64::EPSILON * scale * n as f64;
        let mut piv = Vec::with_capacity(n);
        let mut lower = Vec::with_capacity(n);
        let mut upper = Vec::with_capacity(n);
        for k in 0..n {
            let cand: Vec<usize> = cols[k].iter().copied().collect();
            let mut best = None;
            let mut best_val = 0.0f64;
            for &r in &cand {
                let v = rows[r][&k].abs();
                if v > best_val {
                    best_val = v;
                    best = Some(r);
                }
            }
            let r = match best {
                Some(r) if best_val > tiny => r,
                _ => return Err(format!("sparse LU: zero pivot in column {k}")),
            };
            let prow: Vec<(usize, f64)> = rows[r].iter().map(|(&j, &v)| (j, v)).collect();
            for &(j, _) in &prow {
                cols[j].remove(&r);
            }
            let pivot = rows[r][&k];
            let mut lk = Vec::new();
            for &i in &cand {
                if i == r {
                    continue;
                }
                let aik = rows[i].remove(&k).unwrap_or(0.0);
                cols[k].remove(&i);
                if aik == 0.0 {
                    continue;
                }
                let l = aik / pivot;
                lk.push((i, l));
                for &(j, v) in &prow {
                    if j == k {
                        continue;
                    }
                    let e = rows[i].entry(j).or_insert(0.0);
                    *e -= l * v;
                    cols[j].insert(i);
                }
            }
            let mut urow = vec![(k, pivot)];
            urow.extend(prow.into_iter().filter(|&(j, _)| j != k));
            piv.push(r);
            lower.push(lk);
            upper.push(urow);
        }
        Ok(SparseLu { n, piv, lower, upper })
    }

    fn solve(&self, b: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(self.n, b.ncols());
        for c in 0..b.ncols() {
            let mut w: Vec<f64> = b.column(c).iter().copied().collect();
            for k in 0..self.n {
                let wr = w[self.piv[k]];
                if wr != 0.0 {
                    for &(i, l) in &self.lower[k] {
                        w[i] -= l * wr;
                    }
                }
            }
            for k in (0..self.n).rev() {
                let row = &self.upper[k];
                let mut s = w[self.piv[k]];
                for &(j, v) in &row[1..] {
                    s -= v * out[(j, c)];
                }
                out[(k, c)] = s / row[0].1;
            }
        }
        out
    }

    fn solve_transpose(&self, b: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(self.n, b.ncols());
        for c in 0..b.ncols() {
            // U^T z = b
            let mut rhs: Vec<f64> = b.column(c).iter().copied().collect();
            let mut z = vec![0.0; self.n];
            for k in 0..self.n {
                let row = &self.upper[k];
                z[k] = rhs[k] / row[0].1;
                for &(j, v) in &row[1..] {
                    rhs[j] -= v * z[k];
                }
            }
            let mut w = vec![0.0; self.n];
            for k in 0..self.n {
                w[self.piv[k]] = z[k];
            }
            for k in (0..self.n).rev() {
                let mut s = 0.0;
                for &(i, l) in &self.lower[k] {
                    s += l * w[i];
                }
                w[self.piv[k]] -= s;
            }
            for i in 0..self.n {
                out[(i, c)] = w[i];
            }
        }
        out
    }
}

/// Owned operator variants used by problem instances.
#[derive(Debug, Clone)]
pub enum Operator {
    Dense(DenseOperator),
    DiagPlusRankOne(DiagPlusRankOne),
    Sparse(SparseOperator),
}

impl Operator {
    pub fn kind(&self) -> &'static str {
        match self {
            Operator::Dense(_) => "dense",
            Operator::DiagPlusRankOne(_) => "diagonal-plus-rank-one",
            Operator::Sparse(_) => "sparse",
        }
    }

    /// `scale * M + shift * I` with the same structure.
    pub fn scaled_shift(&self, scale: f64, shift: f64) -> Result<Operator> {
        Ok(match self {
            Operator::Dense(d) => {
                let n = d.dim();
                Operator::Dense(DenseOperator::new(d.matrix() * scale + Matrix::identity(n, n) * shift)?)
            }
            Operator::DiagPlusRankOne(o) => Operator::DiagPlusRankOne(o.scaled_shift(scale, shift)?),
            Operator::Sparse(s) => Operator::Sparse(s.scaled_shift(scale, shift)?),
        })
    }

    fn inner(&self) -> &dyn LinearOperator {
        match self {
            Operator::Dense(o) => o,
            Operator::DiagPlusRankOne(o) => o,
            Operator::Sparse(o) => o,
        }
    }
}

impl LinearOperator for Operator {
    fn dim(&self) -> usize {
        self.inner().dim()
    }
    fn apply(&self, x: &Matrix) -> Matrix {
        self.inner().apply(x)
    }
    fn apply_transpose(&self, x: &Matrix) -> Matrix {
        self.inner().apply_transpose(x)
    }
    fn apply_inverse(&self, x: &Matrix) -> Result<Matrix> {
        self.inner().apply_inverse(x)
    }
    fn apply_inverse_transpose(&self, x: &Matrix) -> Result<Matrix> {
        self.inner().apply_inverse_transpose(x)
    }
    fn supports_inverse(&self) -> bool {
        self.inner().supports_inverse()
    }
    fn to_dense(&self) -> Matrix {
        self.inner().to_dense()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_vec(n: usize, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Vector {
        Vector::from_fn(n, |_, _| rng.random_range(lo..hi))
    }

    #[test]
    fn smw_small_example() {
        let op = DiagPlusRankOne::new(
            Vector::from_element(3, 2.0),
            nalgebra::dvector![1.0, 0.0, 0.0],
            nalgebra::dvector![1.0, 0.0, 0.0],
        )
        .unwrap();
        let x = Matrix::from_column_slice(3, 1, &[1.0, 0.0, 0.0]);
        let y = op.apply_inverse(&x).unwrap();
        assert!((y - x).norm() < 1e-15);
    }

    #[test]
    fn smw_without_rank_one_term() {
        let d = nalgebra::dvector![2.0, 4.0, 5.0];
        let op = DiagPlusRankOne::new(d.clone(), Vector::zeros(3), Vector::from_element(3, 1.0)).unwrap();
        let x = Matrix::from_column_slice(3, 1, &[2.0, 4.0, 10.0]);
        let y = op.apply_inverse(&x).unwrap();
        assert!((y - Matrix::from_column_slice(3, 1, &[1.0, 1.0, 2.0])).norm() < 1e-15);
    }

    #[test]
    fn smw_matches_dense_lu() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for n in [100usize, 200] {
            let d = rand_vec(n, 1.0, 3.0, &mut rng);
            let u = rand_vec(n, 0.0, 0.1, &mut rng);
            let v = rand_vec(n, 0.0, 0.1, &mut rng);
            let op = DiagPlusRankOne::new(d, u, v).unwrap();
            let dense = op.to_dense();
            let x = Matrix::from_fn(n, 3, |_, _| rng.random_range(-1.0..1.0));
            let exact = dense.clone().lu().solve(&x).unwrap();
            let got = op.apply_inverse(&x).unwrap();
            assert!((&got - &exact).norm() <= 1e-12 * exact.norm());
            let exact_t = dense.transpose().lu().solve(&x).unwrap();
            let got_t = op.apply_inverse_transpose(&x).unwrap();
            assert!((&got_t - &exact_t).norm() <= 1e-12 * exact_t.norm());
        }
    }

    #[test]
    fn smw_detects_singularity() {
        let err = DiagPlusRankOne::new(
            Vector::from_element(2, 1.0),
            nalgebra::dvector![1.0, 0.0],
            nalgebra::dvector![1.0, 0.0],
        )
        .unwrap_err();
        assert!(matches!(err, NdreError::Singular(_)));
    }

    #[test]
    fn sparse_lu_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 60;
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, rng.random_range(0.1..1.0)));
            t.push((i, (i + 1) % n, rng.random_range(-2.0..2.0)));
            t.push(((i + 7) % n, i, rng.random_range(-2.0..2.0)));
        }
        let op = SparseOperator::from_triplets(n, &t).unwrap();
        let dense = op.to_dense();
        let x = Matrix::from_fn(n, 2, |_, _| rng.random_range(-1.0..1.0));
        assert!((op.apply(&x) - &dense * &x).norm() < 1e-13);
        assert!((op.apply_transpose(&x) - dense.transpose() * &x).norm() < 1e-13);
        let y = op.apply_inverse(&x).unwrap();
        assert!((&dense * &y - &x).norm() < 1e-10 * x.norm());
        let yt = op.apply_inverse_transpose(&x).unwrap();
        assert!((dense.transpose() * &yt - &x).norm() < 1e-10 * x.norm());
    }

    #[test]
    fn transposed_view_swaps_actions() {
        let m = Matrix::from_row_slice(2, 2, &[2.0, 1.0, 0.0, 3.0]);
        let op = DenseOperator::new(m.clone()).unwrap();
        let t = Transposed(&op);
        let x = Matrix::from_column_slice(2, 1, &[1.0, 1.0]);
        assert_eq!(t.apply(&x), m.transpose() * &x);
        let y = t.apply_inverse(&x).unwrap();
        assert!((m.transpose() * y - x).norm() < 1e-15);
    }
}
