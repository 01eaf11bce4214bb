//! Orthonormal bases of extended block Krylov subspaces
//! `span{V, A^-1 V, A V, A^-2 V, ...}` and plain block Krylov subspaces, with
//! the projected block upper Hessenberg matrix `T = V_{m+1}^T A V_m`.

use serde::{Deserialize, Serialize};

use crate::error::{NdreError, Result};
use crate::problem::LinearOperator;
use crate::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KrylovKind {
    Extended,
    Block,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeflationEvent {
    /// 0 for the starting block, otherwise the step that produced the block.
    pub step: usize,
    pub dropped: usize,
}

/// Default relative threshold for dropping candidate columns.
pub const DEFLATION_TOL: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct KrylovBasis {
    kind: KrylovKind,
    basis: Matrix,
    /// `offsets[j]` is the first column of block `j`; one extra entry at the end.
    offsets: Vec<usize>,
    /// Number of forward-product columns at the front of each block.
    forward: Vec<usize>,
    hessenberg: Matrix,
    steps: usize,
    start_coeffs: Matrix,
    deflations: Vec<DeflationEvent>,
    breakdown: bool,
    tol: f64,
}

/// Orthogonalize `cand` against the columns of `basis` (two block MGS passes
/// over `blocks`), then extract an orthonormal basis of what remains by
/// Gram-Schmidt with column pivoting; columns whose residual norm falls below
/// `tol * (largest candidate column norm)` are dropped.
fn orthogonalize(basis: &Matrix, blocks: &[(usize, usize)], cand: &Matrix, tol: f64) -> (Matrix, usize) {
    let n = cand.nrows();
    let c = cand.ncols();
    let reference = cand.column_iter().map(|col| col.norm()).fold(0.0f64, f64::max);
    if c == 0 || reference == 0.0 {
        return (Matrix::zeros(n, 0), c);
    }
    let project_out = |w: &mut Matrix| {
        for &(start, width) in blocks {
            if width == 0 {
                continue;
            }
            let vb = basis.columns(start, width);
            let coeff = vb.tr_mul(w);
            *w -= vb * coeff;
        }
    };
    let mut w = cand.clone();
    project_out(&mut w);
    project_out(&mut w);

    let mut remaining: Vec<usize> = (0..c).collect();
    let mut kept: Vec<nalgebra::DVector<f64>> = Vec::new();
    let cut = tol * reference;
    while !remaining.is_empty() {
        let (pos, _) = remaining
            .iter()
            .enumerate()
            .map(|(p, &j)| (p, w.column(j).norm()))
            .fold((0, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
        let j = remaining.swap_remove(pos);
        let mut v = w.column(j).into_owned();
        for q in &kept {
            let h = q.dot(&v);
            v.axpy(-h, q, 1.0);
        }
        for &(start, width) in blocks {
            if width == 0 {
                continue;
            }
            let vb = basis.columns(start, width);
            let coeff = vb.tr_mul(&v);
            v -= vb * coeff;
        }
        let nrm = v.norm();
        if nrm <= cut {
            break;
        }
        v /= nrm;
        for &k in &remaining {
            let h = v.dot(&w.column(k));
            let mut col = w.column_mut(k);
            col.axpy(-h, &v, 1.0);
        }
        kept.push(v);
    }
    let r = kept.len();
    let mut out = Matrix::zeros(n, r);
    for (k, q) in kept.iter().enumerate() {
        out.set_column(k, q);
    }
    (out, c - r)
}

impl KrylovBasis {
    /// Starting block `orth([V, A^-1 V])` of the extended Krylov subspace.
    pub fn extended(op: &dyn LinearOperator, v: &Matrix) -> Result<Self> {
        Self::extended_with_tol(op, v, DEFLATION_TOL)
    }

    pub fn extended_with_tol(op: &dyn LinearOperator, v: &Matrix, tol: f64) -> Result<Self> {
        check_start(op, v)?;
        if !op.supports_inverse() {
            return Err(NdreError::NoInverse);
        }
        let inv = op.apply_inverse(v)?;
        let (v1, d1) = orthogonalize(&Matrix::zeros(v.nrows(), 0), &[], v, tol);
        let (v2, d2) = orthogonalize(&v1, &[(0, v1.ncols())], &inv, tol);
        let basis = crate::lowrank::hcat(&[&v1, &v2]);
        let mut start = Matrix::zeros(basis.ncols(), 2 * v.ncols());
        start.columns_mut(0, v.ncols()).copy_from(&basis.tr_mul(v));
        start.columns_mut(v.ncols(), v.ncols()).copy_from(&basis.tr_mul(&inv));
        Ok(Self::from_start(
            KrylovKind::Extended,
            basis,
            v1.ncols(),
            start,
            d1 + d2,
            tol,
        ))
    }

    /// Starting block `orth(V)` of the block Krylov subspace.
    pub fn block(op: &dyn LinearOperator, v: &Matrix) -> Result<Self> {
        Self::block_with_tol(op, v, DEFLATION_TOL)
    }

    pub fn block_with_tol(op: &dyn LinearOperator, v: &Matrix, tol: f64) -> Result<Self> {
        check_start(op, v)?;
        let (v1, d1) = orthogonalize(&Matrix::zeros(v.nrows(), 0), &[], v, tol);
        let start = v1.tr_mul(v);
        let w = v1.ncols();
        Ok(Self::from_start(KrylovKind::Block, v1, w, start, d1, tol))
    }

    fn from_start(kind: KrylovKind, basis: Matrix, forward: usize, start: Matrix, dropped: usize, tol: f64) -> Self {
        let width = basis.ncols();
        let mut deflations = Vec::new();
        if dropped > 0 {
            deflations.push(DeflationEvent { step: 0, dropped });
        }
        KrylovBasis {
            kind,
            offsets: vec![0, width],
            forward: vec![forward],
            hessenberg: Matrix::zeros(width, 0),
            steps: 0,
            start_coeffs: start,
            deflations,
            breakdown: width == 0,
            basis,
            tol,
        }
    }

    fn blocks_upto(&self, count: usize) -> Vec<(usize, usize)> {
        (0..count)
            .map(|j| (self.offsets[j], self.offsets[j + 1] - self.offsets[j]))
            .collect()
    }

    /// One Arnoldi step: builds `V_{m+2}` from `V_{m+1}` and fills block
    /// column `m+1` of the Hessenberg matrix. Returns `false` on breakdown.
    pub fn step(&mut self, op: &dyn LinearOperator) -> Result<bool> {
        if self.breakdown {
            return Ok(false);
        }
        let b = self.steps;
        let (start, end) = (self.offsets[b], self.offsets[b + 1]);
        let width = end - start;
        let fw = self.forward[b];
        let vj = self.basis.columns(start, width).into_owned();
        let av = op.apply(&vj);
        let blocks = self.blocks_upto(b + 1);

        let (new1, d1, new2, d2) = match self.kind {
            KrylovKind::Block => {
                let (q, d) = orthogonalize(&self.basis, &blocks, &av, self.tol);
                (q, d, Matrix::zeros(vj.nrows(), 0), 0)
            }
            KrylovKind::Extended => {
                let cand1 = av.columns(0, fw).into_owned();
                let cand2 = if width > fw {
                    op.apply_inverse(&vj.columns(fw, width - fw).into_owned())?
                } else {
                    Matrix::zeros(vj.nrows(), 0)
                };
                let (q1, d1) = orthogonalize(&self.basis, &blocks, &cand1, self.tol);
                let ext = crate::lowrank::hcat(&[&self.basis, &q1]);
                let mut ext_blocks = blocks.clone();
                ext_blocks.push((self.basis.ncols(), q1.ncols()));
                let (q2, d2) = orthogonalize(&ext, &ext_blocks, &cand2, self.tol);
                (q1, d1, q2, d2)
            }
        };
        let dropped = d1 + d2;
        if dropped > 0 {
            self.deflations.push(DeflationEvent { step: b + 1, dropped });
        }
        let new_width = new1.ncols() + new2.ncols();
        self.basis = crate::lowrank::hcat(&[&self.basis, &new1, &new2]);
        self.offsets.push(self.basis.ncols());
        self.forward.push(new1.ncols());

        let rows = self.basis.ncols();
        let cols = end;
        let mut h = Matrix::zeros(rows, cols);
        let (or, oc) = self.hessenberg.shape();
        h.view_mut((0, 0), (or, oc)).copy_from(&self.hessenberg);
        h.view_mut((0, start), (rows, width)).copy_from(&self.basis.tr_mul(&av));
        self.hessenberg = h;
        self.steps += 1;
        if new_width == 0 {
            self.breakdown = true;
        }
        Ok(!self.breakdown)
    }

    pub fn kind(&self) -> KrylovKind {
        self.kind
    }

    /// Number of completed steps `m`.
    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Dimension of `V_m` (columns of the first `m` blocks).
    pub fn dim(&self) -> usize {
        self.offsets[self.steps]
    }

    pub fn is_breakdown(&self) -> bool {
        self.breakdown
    }

    pub fn deflations(&self) -> &[DeflationEvent] {
        &self.deflations
    }

    pub fn block_widths(&self) -> Vec<usize> {
        self.offsets.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// Coefficients of the starting vectors in the first block.
    pub fn start_coefficients(&self) -> &Matrix {
        &self.start_coeffs
    }

    /// `V_m`, the first `m` blocks.
    pub fn basis(&self) -> Matrix {
        self.basis.columns(0, self.dim()).into_owned()
    }

    /// All blocks including `V_{m+1}`.
    pub fn full_basis(&self) -> &Matrix {
        &self.basis
    }

    /// `T_m = V_m^T A V_m`, read from the Hessenberg matrix.
    pub fn projected(&self) -> Matrix {
        let k = self.dim();
        self.hessenberg.view((0, 0), (k, k)).into_owned()
    }

    /// Block upper Hessenberg `V_{m+1}^T A V_m`.
    pub fn hessenberg(&self) -> &Matrix {
        &self.hessenberg
    }

    /// The block `T_{m+1,m}`, zero-sized after breakdown.
    pub fn subdiagonal_block(&self) -> Matrix {
        if self.steps == 0 {
            return Matrix::zeros(self.offsets[1], 0);
        }
        let m = self.steps;
        let (r0, r1) = (self.offsets[m], self.offsets[m + 1]);
        let (c0, c1) = (self.offsets[m - 1], self.offsets[m]);
        self.hessenberg.view((r0, c0), (r1 - r0, c1 - c0)).into_owned()
    }

    /// Column range of the last block of `V_m` (the `E_m` selector).
    pub fn last_block_range(&self) -> (usize, usize) {
        if self.steps == 0 {
            return (0, 0);
        }
        (self.offsets[self.steps - 1], self.offsets[self.steps])
    }

    /// `V_{m+1}^T A^-1 V_m`, computed on demand (used for checks only).
    pub fn inverse_projection(&self, op: &dyn LinearOperator) -> Result<Matrix> {
        let vm = self.basis();
        let inv = op.apply_inverse(&vm)?;
        Ok(self.basis.tr_mul(&inv))
    }
}

fn check_start(op: &dyn LinearOperator, v: &Matrix) -> Result<()> {
    if v.nrows() != op.dim() {
        return Err(NdreError::Dimension(format!(
            "starting block has {} rows, operator dimension is {}",
            v.nrows(),
            op.dim()
        )));
    }
    crate::dense::ensure_finite(v, "Krylov starting block")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{build_transport_problem, DenseOperator, TransportParams};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(r: usize, c: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    fn orth_error(k: &KrylovBasis) -> f64 {
        let v = k.full_basis();
        (v.tr_mul(v) - Matrix::identity(v.ncols(), v.ncols())).norm()
    }

    fn relation_error(k: &KrylovBasis, op: &dyn LinearOperator) -> f64 {
        let vm = k.basis();
        let lhs = op.apply(&vm);
        let vnext = k.full_basis();
        (lhs - vnext * k.hessenberg()).norm() / op.to_dense().norm()
    }

    #[test]
    fn identity_deflates_inverse_part() {
        let op = DenseOperator::new(Matrix::identity(6, 6)).unwrap();
        let v = random(6, 2, 1).qr().q();
        let k = KrylovBasis::extended(&op, &v).unwrap();
        assert_eq!(k.block_widths(), vec![2]);
        assert_eq!(k.deflations()[0].dropped, 2);
    }

    #[test]
    fn diagonal_first_unit_vector() {
        let op = DenseOperator::new(Matrix::from_diagonal(&nalgebra::dvector![1.0, 2.0, 3.0, 4.0])).unwrap();
        let mut e1 = Matrix::zeros(4, 1);
        e1[(0, 0)] = 1.0;
        let k = KrylovBasis::extended(&op, &e1).unwrap();
        assert_eq!(k.block_widths(), vec![1]);
    }

    #[test]
    fn transport_start_is_orthonormal() {
        let p = build_transport_problem(&TransportParams::new(100, 0.5, 0.5).unwrap()).unwrap();
        let k = KrylovBasis::extended(&p.a, &p.f).unwrap();
        assert!(orth_error(&k) < 1e-12);
    }

    #[test]
    fn hessenberg_pattern_and_relation() {
        let a = random(6, 6, 2);
        let op = DenseOperator::new(a).unwrap();
        let mut k = KrylovBasis::block(&op, &random(6, 1, 3)).unwrap();
        for _ in 0..3 {
            k.step(&op).unwrap();
        }
        let h = k.hessenberg();
        for j in 0..h.ncols() {
            for i in j + 2..h.nrows() {
                assert!(h[(i, j)].abs() < 1e-12);
            }
        }
        assert!(relation_error(&k, &op) < 1e-12);
    }

    #[test]
    fn extended_relation_on_transport() {
        let p = build_transport_problem(&TransportParams::new(100, 0.5, 0.5).unwrap()).unwrap();
        let mut k = KrylovBasis::extended(&p.a, &p.f).unwrap();
        k.step(&p.a).unwrap();
        k.step(&p.a).unwrap();
        assert!(relation_error(&k, &p.a) <= 1e-10);
        assert!(orth_error(&k) < 1e-10);
        let l = k.inverse_projection(&p.a).unwrap();
        let lhs = p.a.apply_inverse(&k.basis()).unwrap();
        assert!((lhs - k.full_basis() * l).norm() / p.a.to_dense().try_inverse().unwrap().norm() < 1e-10);
    }

    #[test]
    fn breakdown_gives_invariant_subspace() {
        let a = random(8, 8, 4) + Matrix::identity(8, 8) * 4.0;
        let op = DenseOperator::new(a.clone()).unwrap();
        let mut k = KrylovBasis::extended(&op, &random(8, 1, 5)).unwrap();
        let mut guard = 0;
        while k.step(&op).unwrap() {
            guard += 1;
            assert!(guard < 10);
        }
        assert_eq!(k.dim(), 8);
        let v = k.basis();
        assert!((&a * &v - &v * k.projected()).norm() < 1e-10 * a.norm());
        assert_eq!(k.subdiagonal_block().nrows(), 0);
    }

    #[test]
    fn symmetric_operator_gives_block_tridiagonal() {
        let r = random(30, 30, 6);
        let a = &r + r.transpose();
        let op = DenseOperator::new(a).unwrap();
        let mut k = KrylovBasis::block(&op, &random(30, 2, 7)).unwrap();
        for _ in 0..5 {
            k.step(&op).unwrap();
        }
        let t = k.projected();
        for j in 0..t.ncols() {
            for i in 0..t.nrows() {
                if i + 4 <= j {
                    assert!(t[(i, j)].abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn first_projection_is_exact() {
        let a = random(8, 8, 8);
        let op = DenseOperator::new(a.clone()).unwrap();
        let mut k = KrylovBasis::block(&op, &random(8, 2, 9)).unwrap();
        k.step(&op).unwrap();
        let v1 = k.basis();
        assert!((k.projected() - v1.transpose() * &a * &v1).norm() < 1e-13);
        assert!(orth_error(&k) < 1e-12);
    }
}
