//! Bartels-Stewart solver for `A X + X B = C` on real Schur forms.

use super::ensure_finite;
use super::schur::{diagonal_blocks, real_schur};
use crate::error::{NdreError, Result};
use crate::Matrix;

/// Schur factorizations of both coefficients, reusable across right-hand sides.
#[derive(Debug, Clone)]
pub struct SylvesterSchur {
    a: Matrix,
    b: Matrix,
    qa: Matrix,
    ta: Matrix,
    qb: Matrix,
    tb: Matrix,
    blocks_a: Vec<(usize, usize)>,
    blocks_b: Vec<(usize, usize)>,
    threshold: f64,
}

fn max_abs(m: &Matrix) -> f64 {
    m.iter().fold(0.0f64, |acc, x| acc.max(x.abs()))
}

impl SylvesterSchur {
    pub fn new(a: &Matrix, b: &Matrix) -> Result<Self> {
        if a.nrows() != a.ncols() || b.nrows() != b.ncols() {
            return Err(NdreError::Dimension(format!(
                "Sylvester coefficients must be square, got {}x{} and {}x{}",
                a.nrows(),
                a.ncols(),
                b.nrows(),
                b.ncols()
            )));
        }
        ensure_finite(a, "Sylvester coefficient A")?;
        ensure_finite(b, "Sylvester coefficient B")?;
        let sa = real_schur(a)?;
        let sb = real_schur(b)?;
        let threshold = (1e-13 * max_abs(&sa.t).max(max_abs(&sb.t))).max(f64::MIN_POSITIVE);
        Ok(SylvesterSchur {
            a: a.clone(),
            b: b.clone(),
            blocks_a: diagonal_blocks(&sa.t),
            blocks_b: diagonal_blocks(&sb.t),
            qa: sa.q,
            ta: sa.t,
            qb: sb.q,
            tb: sb.t,
            threshold,
        })
    }

    /// Solve `A X + X B = C`.
    pub fn solve(&self, c: &Matrix) -> Result<Matrix> {
        let (k, l) = (self.a.nrows(), self.b.nrows());
        if c.nrows() != k || c.ncols() != l {
            return Err(NdreError::Dimension(format!(
                "Sylvester right-hand side is {}x{}, expected {}x{}",
                c.nrows(),
                c.ncols(),
                k,
                l
            )));
        }
        ensure_finite(c, "Sylvester right-hand side")?;
        if k == 0 || l == 0 {
            return Ok(Matrix::zeros(k, l));
        }
        let ct = self.qa.transpose() * c * &self.qb;
        let y = self.solve_quasi_triangular(&ct)?;
        let x = &self.qa * y * self.qb.transpose();
        if cfg!(debug_assertions) {
            let res = (&self.a * &x + &x * &self.b - c).norm();
            let bound = 1e-10 * (self.a.norm() + self.b.norm()) * x.norm() + 1e-14 * c.norm();
            if res > bound {
                return Err(NdreError::SylvesterResidual { residual: res, bound });
            }
        }
        Ok(x)
    }

    fn solve_quasi_triangular(&self, c: &Matrix) -> Result<Matrix> {
        let (k, l) = (c.nrows(), c.ncols());
        let mut y = Matrix::zeros(k, l);
        for &(j0, wj) in &self.blocks_b {
            let mut r = c.columns(j0, wj).into_owned();
            if j0 > 0 {
                r -= y.columns(0, j0) * self.tb.view((0, j0), (j0, wj));
            }
            for &(i0, wi) in self.blocks_a.iter().rev() {
                let tail = i0 + wi;
                let mut rhs = r.rows(i0, wi).into_owned();
                if tail < k {
                    rhs -= self.ta.view((i0, tail), (wi, k - tail)) * y.view((tail, j0), (k - tail, wj));
                }
                let blk = small_sylvester(
                    &self.ta.view((i0, i0), (wi, wi)).into_owned(),
                    &self.tb.view((j0, j0), (wj, wj)).into_owned(),
                    &rhs,
                    self.threshold,
                )?;
                y.view_mut((i0, j0), (wi, wj)).copy_from(&blk);
            }
        }
        Ok(y)
    }
}

/// Solve a block equation of size at most 2x2 by Gaussian elimination with
/// complete pivoting on its Kronecker form.
fn small_sylvester(t11: &Matrix, t22: &Matrix, rhs: &Matrix, threshold: f64) -> Result<Matrix> {
    let (p, q) = (t11.nrows(), t22.nrows());
    let n = p * q;
    let mut m = [[0.0f64; 4]; 4];
    let mut b = [0.0f64; 4];
    for j in 0..q {
        for i in 0..p {
            let row = i + p * j;
            b[row] = rhs[(i, j)];
            for jj in 0..q {
                for ii in 0..p {
                    let col = ii + p * jj;
                    let mut v = 0.0;
                    if j == jj {
                        v += t11[(i, ii)];
                    }
                    if i == ii {
                        v += t22[(jj, j)];
                    }
                    m[row][col] = v;
                }
            }
        }
    }
    let mut perm = [0usize, 1, 2, 3];
    for step in 0..n {
        let (mut pr, mut pc, mut best) = (step, step, -1.0);
        for (r, row) in m.iter().enumerate().take(n).skip(step) {
            for (cidx, v) in row.iter().enumerate().take(n).skip(step) {
                if v.abs() > best {
                    best = v.abs();
                    pr = r;
                    pc = cidx;
                }
            }
        }
        if best < threshold {
            return Err(NdreError::SingularSylvester { pivot: best, threshold });
        }
        m.swap(step, pr);
        b.swap(step, pr);
        if pc != step {
            for row in m.iter_mut() {
                row.swap(step, pc);
            }
            perm.swap(step, pc);
        }
        for r in step + 1..n {
            let f = m[r][step] / m[step][step];
            if f != 0.0 {
                for cidx in step..n {
                    m[r][cidx] -= f * m[step][cidx];
                }
                b[r] -= f * b[step];
            }
        }
    }
    let mut z = [0.0f64; 4];
    for r in (0..n).rev() {
        let mut s = b[r];
        for cidx in r + 1..n {
            s -= m[r][cidx] * z[cidx];
        }
        z[r] = s / m[r][r];
    }
    let mut out = Matrix::zeros(p, q);
    for (pos, &var) in perm.iter().enumerate().take(n) {
        out[(var % p, var / p)] = z[pos];
    }
    Ok(out)
}

/// Solve `A X + X B = C` by Bartels-Stewart.
pub fn solve_sylvester(a: &Matrix, b: &Matrix, c: &Matrix) -> Result<Matrix> {
    SylvesterSchur::new(a, b)?.solve(c)
}

/// Same as [`solve_sylvester`] but returns the factorization for reuse.
pub fn solve_sylvester_schur(a: &Matrix, b: &Matrix, c: &Matrix) -> Result<(Matrix, SylvesterSchur)> {
    let f = SylvesterSchur::new(a, b)?;
    let x = f.solve(c)?;
    Ok((x, f))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(r: usize, c: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    fn kron_solve(a: &Matrix, b: &Matrix, c: &Matrix) -> Matrix {
        let (k, l) = (a.nrows(), b.nrows());
        let mut m = Matrix::zeros(k * l, k * l);
        for j in 0..l {
            for i in 0..k {
                for jj in 0..l {
                    for ii in 0..k {
                        let mut v = 0.0;
                        if j == jj {
                            v += a[(i, ii)];
                        }
                        if i == ii {
                            v += b[(jj, j)];
                        }
                        m[(i + k * j, ii + k * jj)] = v;
                    }
                }
            }
        }
        let rhs = nalgebra::DVector::from_column_slice(c.as_slice());
        let x = m.lu().solve(&rhs).unwrap();
        Matrix::from_column_slice(k, l, x.as_slice())
    }

    #[test]
    fn identity_case() {
        let i = Matrix::identity(3, 3);
        let x = solve_sylvester(&i, &i, &(&i * 2.0)).unwrap();
        assert!((x - i).norm() < 1e-15);
    }

    #[test]
    fn diagonal_entrywise_formula() {
        let a = Matrix::from_diagonal(&nalgebra::dvector![1.0, 2.0]);
        let b = Matrix::from_diagonal(&nalgebra::dvector![3.0, 4.0]);
        let x = solve_sylvester(&a, &b, &Matrix::repeat(2, 2, 1.0)).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert!((x[(i, j)] - 1.0 / (a[(i, i)] + b[(j, j)])).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn random_matches_kronecker() {
        let a = random(20, 20, 1) + Matrix::identity(20, 20) * 3.0;
        let b = random(20, 20, 2) + Matrix::identity(20, 20) * 3.0;
        let c = random(20, 20, 3);
        let x = solve_sylvester(&a, &b, &c).unwrap();
        let xk = kron_solve(&a, &b, &c);
        assert!((&x - &xk).norm() <= 1e-10 * xk.norm());
    }

    #[test]
    fn rectangular_with_complex_pairs() {
        // random matrices without shift have complex eigenvalues
        let a = random(7, 7, 4);
        let b = random(4, 4, 5) + Matrix::identity(4, 4) * 4.0;
        let c = random(7, 4, 6);
        let x = solve_sylvester(&a, &b, &c).unwrap();
        assert!((&a * &x + &x * &b - &c).norm() < 1e-12);
        assert!((x - kron_solve(&a, &b, &c)).norm() < 1e-11);
    }

    #[test]
    fn common_eigenvalue_is_rejected() {
        let a = Matrix::from_diagonal(&nalgebra::dvector![1.0, 2.0]);
        let b = Matrix::from_diagonal(&nalgebra::dvector![-1.0, 5.0]);
        let err = solve_sylvester(&a, &b, &Matrix::repeat(2, 2, 1.0)).unwrap_err();
        assert!(matches!(err, NdreError::SingularSylvester { .. }));
    }
}
