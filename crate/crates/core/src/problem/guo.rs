//! Cyclic bidiagonal test problem with a rank-two quadratic term.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::coupling::CouplingMatrix;
use super::ndre::NdreProblem;
use super::operator::{Operator, SparseOperator};
use crate::error::{NdreError, Result};
use crate::lowrank::LowRankFactorPair;
use crate::Matrix;

/// `A = D` with 2 on the diagonal, -1 on the superdiagonal and -1 at (n, 1);
/// `S = diag(1, 1, 0, ..., 0)`; `F`, `G` uniform on [0, 1) from `seed`.
pub fn build_guo_problem(n: usize, seed: u64) -> Result<NdreProblem> {
    if n < 3 {
        return Err(NdreError::InvalidParameter(format!(
            "Guo problem needs n >= 3, got {n}"
        )));
    }
    let mut t = Vec::with_capacity(2 * n);
    for i in 0..n {
        t.push((i, i, 2.0));
        if i + 1 < n {
            t.push((i, i + 1, -1.0));
        }
    }
    t.push((n - 1, 0, -1.0));
    let a = SparseOperator::from_triplets(n, &t)?;
    let mut e12 = Matrix::zeros(n, 2);
    e12[(0, 0)] = 1.0;
    e12[(1, 1)] = 1.0;
    let s = CouplingMatrix::factored(e12.clone(), e12)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f = Matrix::from_fn(n, 2, |_, _| rng.random::<f64>());
    let g = Matrix::from_fn(n, 2, |_, _| rng.random::<f64>());
    let mut prob = NdreProblem::new(
        Operator::Sparse(a.clone()),
        Operator::Sparse(a),
        s,
        f,
        g,
        LowRankFactorPair::zeros(n, n),
    )?
    .with_label(format!("guo(n={n})"));
    prob.seed = Some(seed);
    Ok(prob)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::LinearOperator;

    #[test]
    fn printed_pattern_n3() {
        let p = build_guo_problem(3, 1).unwrap();
        let expect = Matrix::from_row_slice(3, 3, &[2.0, -1.0, 0.0, 0.0, 2.0, -1.0, -1.0, 0.0, 2.0]);
        assert_eq!(p.a.to_dense(), expect);
        assert_eq!(p.d.to_dense(), expect);
    }

    #[test]
    fn coupling_has_rank_two() {
        let p = build_guo_problem(10, 3).unwrap();
        let s = p.s.to_dense();
        let (_, sv, _) = crate::dense::svd_sorted(&s).unwrap();
        assert_eq!(sv.iter().filter(|&&x| x > 1e-12).count(), 2);
    }

    #[test]
    fn seed_is_deterministic() {
        let a = build_guo_problem(20, 99).unwrap();
        let b = build_guo_problem(20, 99).unwrap();
        assert_eq!(a.f, b.f);
        assert_eq!(a.g, b.g);
        assert!(a.f.iter().all(|&x| (0.0..1.0).contains(&x)));
        let c = build_guo_problem(20, 100).unwrap();
        assert_ne!(a.f, c.f);
    }
}
