//! Dense reference solutions for verification.

use serde::{Deserialize, Serialize};

use crate::dense::svd_sorted;
use crate::eba::project_problem;
use crate::error::{NdreError, Result};
use crate::krylov::{KrylovBasis, DEFLATION_TOL};
use crate::problem::{validate_m_matrix, DenseNdre, MMatrixClass, NdreProblem};
use crate::projected::{
    solve_projected_bdf_at, solve_projected_exp, BdfOptions, ExpOptions, ProjectedNdre, Trajectory,
};
use crate::Matrix;

/// Largest `n + p` the dense oracles accept by default.
pub const ORACLE_MAX_DIM: usize = 2000;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OracleOptions {
    /// Condition limit on `Y` before a substep is halved.
    pub cond_limit: f64,
    pub substep_limit: usize,
    /// Skip the size guard.
    pub allow_large: bool,
}

impl Default for OracleOptions {
    fn default() -> Self {
        OracleOptions {
            cond_limit: 1e6,
            substep_limit: 60,
            allow_large: false,
        }
    }
}

fn guard(dense: &DenseNdre, limit: usize, allow: bool) -> Result<()> {
    let dim = dense.n() + dense.p();
    if !allow && dim > limit {
        return Err(NdreError::SizeGuard(format!(
            "dense oracle limited to n + p <= {limit}, got {dim}"
        )));
    }
    Ok(())
}

/// The full equation viewed as an unprojected one (`F = Q`, `G = I`).
pub fn as_projected(dense: &DenseNdre) -> Result<ProjectedNdre> {
    ProjectedNdre::new(
        dense.a.clone(),
        dense.d.clone(),
        dense.s.clone(),
        dense.q.clone(),
        Matrix::identity(dense.p(), dense.p()),
        dense.x0.clone(),
    )
}

/// `X(t) = Z(t) Y(t)^-1` with `[Y; Z] = e^{tH} [I; X0]`, `H = [[D, -S], [Q, -A]]`,
/// evaluated at increasing `times` with renormalised substeps.
pub fn solve_ndre_direct_exp(dense: &DenseNdre, times: &[f64], opts: &OracleOptions) -> Result<Trajectory> {
    guard(dense, ORACLE_MAX_DIM, opts.allow_large)?;
    let eo = ExpOptions {
        cond_limit: opts.cond_limit,
        substep_limit: opts.substep_limit,
        initial_substep: None,
    };
    solve_projected_exp(&as_projected(dense)?, times, &eo)
}

/// Dense BDF of the given order with a dense Newton solve per step.
pub fn integrate_dense(dense: &DenseNdre, h: f64, t_f: f64, order: usize, record_times: &[f64]) -> Result<Trajectory> {
    guard(dense, 600, false)?;
    let opts = BdfOptions::new(order, h, t_f);
    solve_projected_bdf_at(&as_projected(dense)?, &opts, record_times)
}

#[derive(Debug, Clone)]
pub struct MinimalSolution {
    pub x: Matrix,
    pub iterations: usize,
    pub last_change: f64,
}

/// Minimal nonnegative solution of `-A X - X D + X S X + Q = 0` by the
/// diagonal splitting `A = A1 - A2`, `D = D1 - D2`:
/// `A1 X+ + X+ D1 = X S X + A2 X + X D2 + Q`, started from zero.
pub fn nare_minimal_solution(dense: &DenseNdre, tol: f64, itermax: usize) -> Result<MinimalSolution> {
    guard(dense, ORACLE_MAX_DIM, false)?;
    let (n, p) = (dense.n(), dense.p());
    let mut l = Matrix::zeros(n + p, n + p);
    l.view_mut((0, 0), (p, p)).copy_from(&dense.d);
    l.view_mut((0, p), (p, n)).copy_from(&(-&dense.s));
    l.view_mut((p, 0), (n, p)).copy_from(&(-&dense.q));
    l.view_mut((p, p), (n, n)).copy_from(&dense.a);
    match validate_m_matrix(&l)? {
        MMatrixClass::NotM => {
            return Err(NdreError::InvalidParameter(
                "minimal solution iteration needs [[D, -S], [-Q, A]] to be an M-matrix".into(),
            ))
        }
        MMatrixClass::SingularM | MMatrixClass::NonsingularM => {}
    }
    let a1: Vec<f64> = (0..n).map(|i| dense.a[(i, i)]).collect();
    let d1: Vec<f64> = (0..p).map(|j| dense.d[(j, j)]).collect();
    let a2 = Matrix::from_diagonal(&crate::Vector::from_vec(a1.clone())) - &dense.a;
    let d2 = Matrix::from_diagonal(&crate::Vector::from_vec(d1.clone())) - &dense.d;
    let mut x = Matrix::zeros(n, p);
    let mut change = f64::INFINITY;
    for it in 1..=itermax {
        let rhs = &x * (&dense.s * &x) + &a2 * &x + &x * &d2 + &dense.q;
        let next = Matrix::from_fn(n, p, |i, j| rhs[(i, j)] / (a1[i] + d1[j]));
        change = (&next - &x).norm();
        x = next;
        if !change.is_finite() {
            break;
        }
        if change < tol {
            return Ok(MinimalSolution {
                x,
                iterations: it,
                last_change: change,
            });
        }
    }
    Err(NdreError::NoConvergence {
        what: "minimal-solution fixed point",
        iterations: itermax,
        residual: change,
    })
}

/// Moore-Penrose pseudo-inverse with relative cutoff.
fn pinv(m: &Matrix, rcond: f64) -> Result<Matrix> {
    let (u, s, v) = svd_sorted(m)?;
    if s.is_empty() || s[0] == 0.0 {
        return Ok(Matrix::zeros(m.ncols(), m.nrows()));
    }
    let r = s.iter().filter(|&&x| x > rcond * s[0]).count();
    let mut out = Matrix::zeros(m.ncols(), m.nrows());
    for k in 0..r {
        out += v.column(k) * u.column(k).transpose() / s[k];
    }
    Ok(out)
}

/// Projected exponential approximation: `[X2; X1] = U e^{t H_m} U^T [I; X0]`
/// with `U = diag(W, V)`, returning `X1 X2^+`. The exponential is applied in
/// `ceil(t |H_m|_1)` equal substeps, renormalising the quotient after each.
/// The bases must contain the initial value's column and row spaces, which
/// holds for [`oracle_bases`].
pub fn direct_exp_projected(
    problem: &NdreProblem,
    basis_a: &KrylovBasis,
    basis_d: &KrylovBasis,
    t: f64,
) -> Result<Matrix> {
    let (n, p) = (problem.n(), problem.p());
    if n + p > ORACLE_MAX_DIM {
        return Err(NdreError::SizeGuard(format!(
            "projected exponential oracle limited to n + p <= {ORACLE_MAX_DIM}"
        )));
    }
    if !(t >= 0.0) || !t.is_finite() {
        return Err(NdreError::InvalidParameter(format!(
            "time must be finite and nonnegative, got {t}"
        )));
    }
    let proj = project_problem(problem, basis_a, basis_d)?;
    let h = proj.embedding();
    let v = basis_a.basis();
    let w = basis_d.basis();
    let (k, l) = (v.ncols(), w.ncols());
    let x0 = problem.x0.to_dense();
    let mut gamma = Matrix::zeros(l + k, p);
    gamma.view_mut((0, 0), (l, p)).copy_from(&w.transpose());
    gamma.view_mut((l, 0), (k, p)).copy_from(&v.tr_mul(&x0));
    // Gamma = Gamma W W^T under the range assumption
    let mut state = gamma * &w;
    let steps = (t * crate::dense::norm1(&h)).ceil().clamp(1.0, 1e6) as usize;
    let e = crate::dense::matrix_exponential(&(h * (t / steps as f64)))?;
    for _ in 0..steps {
        state = &e * state;
        let top = state.rows(0, l).into_owned();
        state *= pinv(&top, 1e-13)?;
    }
    let top = state.rows(0, l).into_owned();
    let y = state.rows(l, k) * pinv(&top, 1e-13)?;
    Ok(v * y * w.transpose())
}

/// `m` steps of extended block Arnoldi on both sides, started from the
/// constant term (and the initial value when nonzero).
pub fn oracle_bases(problem: &NdreProblem, m: usize) -> Result<(KrylovBasis, KrylovBasis)> {
    let (fa, gd) = if problem.x0.rank() == 0 {
        (problem.f.clone(), problem.g.clone())
    } else {
        (
            crate::lowrank::hcat(&[&problem.f, &problem.x0.z1]),
            crate::lowrank::hcat(&[&problem.g, &problem.x0.z2]),
        )
    };
    let dt = crate::problem::Transposed(&problem.d);
    let mut va = KrylovBasis::extended_with_tol(&problem.a, &fa, DEFLATION_TOL)?;
    let mut wd = KrylovBasis::extended_with_tol(&dt, &gd, DEFLATION_TOL)?;
    for _ in 0..m {
        if !va.is_breakdown() {
            va.step(&problem.a)?;
        }
        if !wd.is_breakdown() {
            wd.step(&dt)?;
        }
    }
    Ok((va, wd))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dense::{matrix_exponential, solve_small_nare_newton};
    use crate::eba::{solve_ndre, Integrator, SolverOptions};
    use crate::problem::{build_transport_problem, TransportParams, DENSE_GUARD};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn transport(n: usize, c: f64, alpha: f64) -> NdreProblem {
        build_transport_problem(&TransportParams::new(n, c, alpha).unwrap()).unwrap()
    }

    fn scalar(a: f64, d: f64, s: f64, q: f64, x0: f64) -> DenseNdre {
        let m = |v: f64| Matrix::from_element(1, 1, v);
        DenseNdre {
            a: m(a),
            d: m(d),
            s: m(s),
            q: m(q),
            x0: m(x0),
        }
    }

    #[test]
    fn direct_exp_at_zero_is_initial_value() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut dense = transport(10, 0.5, 0.5).to_dense(DENSE_GUARD).unwrap();
        dense.x0 = Matrix::from_fn(10, 10, |_, _| rng.random_range(0.0..0.1));
        let tr = solve_ndre_direct_exp(&dense, &[0.0], &OracleOptions::default()).unwrap();
        assert_eq!(tr.values[0], dense.x0);
    }

    #[test]
    fn direct_exp_linear_case() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let n = 6;
        let a = Matrix::from_fn(n, n, |_, _| rng.random_range(-0.5..0.5));
        let d = Matrix::from_fn(n, n, |_, _| rng.random_range(-0.5..0.5));
        let dense = DenseNdre {
            a: a.clone(),
            d: d.clone(),
            s: Matrix::zeros(n, n),
            q: Matrix::zeros(n, n),
            x0: Matrix::identity(n, n),
        };
        let t = 1.5;
        let x = &solve_ndre_direct_exp(&dense, &[t], &OracleOptions::default())
            .unwrap()
            .values[0];
        let expected = matrix_exponential(&(a * -t)).unwrap() * matrix_exponential(&(d * -t)).unwrap();
        assert!((x - &expected).norm() < 1e-12 * expected.norm());
    }

    #[test]
    fn minimal_solution_scalar_and_trivial() {
        let x = nare_minimal_solution(&scalar(2.0, 2.0, 1.0, 3.0, 0.0), 1e-14, 10_000).unwrap();
        assert!((x.x[(0, 0)] - 1.0).abs() < 1e-12);
        let mut dense = transport(8, 0.5, 0.5).to_dense(DENSE_GUARD).unwrap();
        dense.q.fill(0.0);
        let z = nare_minimal_solution(&dense, 1e-14, 10).unwrap();
        assert_eq!(z.x, Matrix::zeros(8, 8));
    }

    #[test]
    fn minimal_solution_matches_newton_and_is_monotone() {
        let dense = transport(8, 0.5, 0.5).to_dense(DENSE_GUARD).unwrap();
        // monotone iterates
        let mut prev = Matrix::zeros(8, 8);
        for it in [1, 2, 5, 10, 20] {
            let x = iterate(&dense, it);
            assert!((&x - &prev).iter().all(|&v| v >= -1e-15));
            prev = x;
        }
        let fixed = nare_minimal_solution(&dense, 1e-14, 100_000).unwrap().x;
        let newton = solve_small_nare_newton(&dense.a, &dense.d, &dense.s, &dense.q, &Matrix::zeros(8, 8), 1e-14, 50)
            .unwrap()
            .x;
        assert!((&fixed - &newton).norm() < 1e-10 * newton.norm());
    }

    fn iterate(dense: &DenseNdre, its: usize) -> Matrix {
        let n = dense.n();
        let a1: Vec<f64> = (0..n).map(|i| dense.a[(i, i)]).collect();
        let d1: Vec<f64> = (0..n).map(|j| dense.d[(j, j)]).collect();
        let a2 = Matrix::from_diagonal(&crate::Vector::from_vec(a1.clone())) - &dense.a;
        let d2 = Matrix::from_diagonal(&crate::Vector::from_vec(d1.clone())) - &dense.d;
        let mut x = Matrix::zeros(n, n);
        for _ in 0..its {
            let rhs = &x * (&dense.s * &x) + &a2 * &x + &x * &d2 + &dense.q;
            x = Matrix::from_fn(n, n, |i, j| rhs[(i, j)] / (a1[i] + d1[j]));
        }
        x
    }

    #[test]
    fn direct_exp_reaches_minimal_solution() {
        let p = transport(40, 0.5, 0.5);
        let dense = p.to_dense(DENSE_GUARD).unwrap();
        let x = &solve_ndre_direct_exp(&dense, &[10.0], &OracleOptions::default())
            .unwrap()
            .values[0];
        let xmin = nare_minimal_solution(&dense, 1e-14, 100_000).unwrap().x;
        let err = (x - &xmin).amax();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn dense_bdf_closed_form_and_order() {
        // x' = -2x + 1: x(t) = (1 - e^{-2t}) / 2
        let dense = scalar(1.0, 1.0, 0.0, 1.0, 0.0);
        let exact = (1.0 - (-2.0f64).exp()) / 2.0;
        let err = |h: f64| (integrate_dense(&dense, h, 1.0, 1, &[1.0]).unwrap().values[0][(0, 0)] - exact).abs();
        let (e1, e2) = (err(0.01), err(0.005));
        assert!(e1 < 0.01);
        let ratio = e1 / e2;
        assert!((1.8..=2.2).contains(&ratio), "{ratio}");
    }

    #[test]
    fn dense_bdf2_matches_direct_exp() {
        let dense = transport(20, 0.5, 0.5).to_dense(DENSE_GUARD).unwrap();
        let x = &integrate_dense(&dense, 1e-4, 1.0, 2, &[1.0]).unwrap().values[0];
        let y = &solve_ndre_direct_exp(&dense, &[1.0], &OracleOptions::default())
            .unwrap()
            .values[0];
        assert!((x - y).amax() < 1e-6);
    }

    #[test]
    fn projected_exp_full_subspace_matches_direct() {
        let p = transport(8, 0.5, 0.5);
        let (va, wd) = oracle_bases(&p, 8).unwrap();
        assert_eq!((va.dim(), wd.dim()), (8, 8));
        let x = direct_exp_projected(&p, &va, &wd, 1.0).unwrap();
        let dense = p.to_dense(DENSE_GUARD).unwrap();
        let y = &solve_ndre_direct_exp(&dense, &[1.0], &OracleOptions::default())
            .unwrap()
            .values[0];
        let diff = (&x - y).norm() / y.norm();
        assert!(diff < 1e-10, "{diff}");
        assert_eq!(direct_exp_projected(&p, &va, &wd, 0.0).unwrap().norm(), 0.0);
    }

    #[test]
    fn projected_exp_close_to_galerkin() {
        let p = transport(40, 0.5, 0.5);
        let m = 8;
        let (va, wd) = oracle_bases(&p, m).unwrap();
        let x = direct_exp_projected(&p, &va, &wd, 1.0).unwrap();
        let opts = SolverOptions {
            integrator: Integrator::Exp,
            m_max: m,
            check_every: m,
            tol_rel: 1e-300,
            ..SolverOptions::default()
        };
        let sol = solve_ndre(&p, &opts).unwrap();
        let g = sol.assemble_dense(sol.times.len() - 1, DENSE_GUARD).unwrap();
        assert!((&x - &g).amax() < 1e-4);
    }
}
