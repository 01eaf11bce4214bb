//! Projection driver: grow extended block Krylov bases for `(A, F)` and
//! `(D^T, G)`, solve the projected equation every few steps, and stop on the
//! residual norm computed from the subdiagonal blocks alone.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dense::{norm2, svd_sorted, truncated_svd_factor};
use crate::error::{NdreError, Result};
use crate::krylov::{KrylovBasis, KrylovKind, DEFLATION_TOL};
use crate::lowrank::{hcat, LowRankFactorPair};
use crate::problem::{LinearOperator, NdreProblem, Transposed};
use crate::projected::{
    solve_projected_bdf_at, solve_projected_exp, solve_projected_rosenbrock2_at, BdfOptions, ExpOptions,
    IntegratorStats, ProjectedNdre, RosenbrockMatrices, RosenbrockOptions, Trajectory,
};
use crate::report::{DenseArray, ResidualRecord, SideReport, SolveReport, SpotCheck};
use crate::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Integrator {
    Exp,
    Bdf1,
    Bdf2,
    Bdf3,
    Rosenbrock2,
}

impl Integrator {
    pub fn name(&self) -> &'static str {
        match self {
            Integrator::Exp => "exp",
            Integrator::Bdf1 => "bdf1",
            Integrator::Bdf2 => "bdf2",
            Integrator::Bdf3 => "bdf3",
            Integrator::Rosenbrock2 => "rosenbrock2",
        }
    }
}

/// Which residual norm decides convergence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ResidualNorm {
    #[default]
    Frobenius,
    Spectral,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolverOptions {
    pub m_max: usize,
    pub check_every: usize,
    pub tol_rel: f64,
    pub integrator: Integrator,
    pub h: f64,
    pub t_f: f64,
    /// Output times; empty means `[t_f]`.
    pub t_grid: Vec<f64>,
    pub trunc_tol: f64,
    pub gate: ResidualNorm,
    pub cond_limit: f64,
    pub substep_limit: usize,
    pub newton_tol: f64,
    pub newton_itermax: usize,
    pub rosenbrock_gamma: f64,
    pub rosenbrock_matrices: RosenbrockMatrices,
    pub deflation_tol: f64,
    /// Use plain block Arnoldi on both sides even when inverses exist.
    pub block_arnoldi: bool,
    /// Keep spot-check data (subdiagonal blocks, solution slices) per check.
    pub spot_checks: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            m_max: 100,
            check_every: 5,
            tol_rel: 1e-10,
            integrator: Integrator::Bdf1,
            h: 0.01,
            t_f: 1.0,
            t_grid: Vec::new(),
            trunc_tol: 1e-12,
            gate: ResidualNorm::Frobenius,
            cond_limit: 1e6,
            substep_limit: 60,
            newton_tol: 1e-12,
            newton_itermax: 30,
            rosenbrock_gamma: 1.0 + std::f64::consts::FRAC_1_SQRT_2,
            rosenbrock_matrices: RosenbrockMatrices::Literal,
            deflation_tol: DEFLATION_TOL,
            block_arnoldi: false,
            spot_checks: true,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(NdreError::InvalidParameter(msg));
        if self.m_max == 0 || self.check_every == 0 {
            return bad("m_max and check_every must be positive".into());
        }
        if !(self.tol_rel > 0.0) || !(self.h > 0.0) || !(self.t_f > 0.0) || !(self.trunc_tol >= 0.0) {
            return bad(format!(
                "tol_rel = {}, h = {}, t_f = {}, trunc_tol = {}",
                self.tol_rel, self.h, self.t_f, self.trunc_tol
            ));
        }
        if let Some(t) = self
            .t_grid
            .iter()
            .find(|&&t| !(0.0..=self.t_f * (1.0 + 1e-12)).contains(&t))
        {
            return bad(format!("output time {t} outside [0, {}]", self.t_f));
        }
        Ok(())
    }

    /// Sorted, deduplicated output times.
    pub fn output_times(&self) -> Vec<f64> {
        let mut t: Vec<f64> = if self.t_grid.is_empty() {
            vec![self.t_f]
        } else {
            self.t_grid.clone()
        };
        t.sort_by(f64::total_cmp);
        t.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * self.t_f);
        t
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ResidualNorms {
    pub frobenius: f64,
    pub spectral: f64,
}

/// Residual of `X_m = V Y W^T` from the subdiagonal blocks: with
/// `a = T_A E^T Y` and `d = Y E T_D^T`, the residual lives in two orthogonal
/// pieces, giving `sqrt(|a|_F^2 + |d|_F^2)` and `max(|a|_2, |d|_2)`. `E`
/// selects the last `t_next_a.ncols()` rows and `t_next_d.ncols()` columns
/// of `Y`.
pub fn residual_norm(y: &Matrix, t_next_a: &Matrix, t_next_d: &Matrix) -> Result<ResidualNorms> {
    let (k, l) = y.shape();
    let (wa, wd) = (t_next_a.ncols(), t_next_d.ncols());
    if wa > k || wd > l {
        return Err(NdreError::Dimension(format!(
            "residual blocks {}x{} and {}x{} for a {}x{} solution",
            t_next_a.nrows(),
            wa,
            t_next_d.nrows(),
            wd,
            k,
            l
        )));
    }
    let a = t_next_a * y.rows(k - wa, wa);
    let d = y.columns(l - wd, wd) * t_next_d.transpose();
    Ok(ResidualNorms {
        frobenius: (a.norm_squared() + d.norm_squared()).sqrt(),
        spectral: norm2(&a).max(norm2(&d)),
    })
}

/// `(|T_{m+1,m}^A|_2, |T_{m+1,m}^D|_2)`, the norms of the perturbations for
/// which the projected solution is exact.
pub fn perturbation_norms(basis_a: &KrylovBasis, basis_d: &KrylovBasis) -> (f64, f64) {
    (norm2(&basis_a.subdiagonal_block()), norm2(&basis_d.subdiagonal_block()))
}

/// `V Y W^T`, refusing results with more than `guard` entries.
pub fn assemble_dense(y: &Matrix, v: &Matrix, w: &Matrix, guard: usize) -> Result<Matrix> {
    if v.nrows() * w.nrows() > guard {
        return Err(NdreError::SizeGuard(format!(
            "assembling a {}x{} matrix exceeds {guard} entries",
            v.nrows(),
            w.nrows()
        )));
    }
    if y.shape() != (v.ncols(), w.ncols()) {
        return Err(NdreError::Dimension(format!(
            "Y is {:?} for bases with {} and {} columns",
            y.shape(),
            v.ncols(),
            w.ncols()
        )));
    }
    Ok(v * y * w.transpose())
}

/// Galerkin projection of the problem onto `V` (A side) and `W` (D side).
pub fn project_problem(problem: &NdreProblem, basis_a: &KrylovBasis, basis_d: &KrylovBasis) -> Result<ProjectedNdre> {
    let v = basis_a.basis();
    let w = basis_d.basis();
    let t_a = basis_a.projected();
    let t_d = basis_d.projected().transpose();
    let s_m = problem.s.project(&w, &v);
    let f_m = v.tr_mul(&problem.f);
    let g_m = w.tr_mul(&problem.g);
    let y0 = if problem.x0.rank() == 0 {
        Matrix::zeros(v.ncols(), w.ncols())
    } else {
        v.tr_mul(&problem.x0.z1) * w.tr_mul(&problem.x0.z2).transpose()
    };
    ProjectedNdre::new(t_a, t_d, s_m, f_m, g_m, y0)
}

#[derive(Debug, Clone)]
pub struct LowRankSolution {
    pub times: Vec<f64>,
    pub factors: Vec<LowRankFactorPair>,
    /// Projected solutions `Y_m(t)` at `times`.
    pub projected: Vec<Matrix>,
    pub basis_a: Matrix,
    pub basis_d: Matrix,
    pub converged: bool,
    pub residual: f64,
    pub residual_rel: f64,
    pub report: SolveReport,
}

impl LowRankSolution {
    /// Dense `X_m(t)` at output index `i`.
    pub fn assemble_dense(&self, i: usize, guard: usize) -> Result<Matrix> {
        assemble_dense(&self.projected[i], &self.basis_a, &self.basis_d, guard)
    }

    /// Factors at the last output time.
    pub fn final_factors(&self) -> &LowRankFactorPair {
        self.factors.last().expect("at least one output time")
    }
}

fn start_basis(
    op: &dyn LinearOperator,
    start: &Matrix,
    opts: &SolverOptions,
    side: &mut SideReport,
    notes: &mut Vec<String>,
    name: &str,
) -> Result<KrylovBasis> {
    if !opts.block_arnoldi {
        match KrylovBasis::extended_with_tol(op, start, opts.deflation_tol) {
            Ok(b) => {
                side.kind = Some(KrylovKind::Extended);
                return Ok(b);
            }
            Err(NdreError::NoInverse) | Err(NdreError::Singular(_)) => {
                side.fallback = true;
                notes.push(format!("{name} side: no usable inverse, using block Arnoldi"));
            }
            Err(e) => return Err(e),
        }
    }
    side.kind = Some(KrylovKind::Block);
    KrylovBasis::block_with_tol(op, start, opts.deflation_tol)
}

fn integrate(proj: &ProjectedNdre, opts: &SolverOptions, times: &[f64]) -> Result<Trajectory> {
    match opts.integrator {
        Integrator::Exp => {
            let eo = ExpOptions {
                cond_limit: opts.cond_limit,
                substep_limit: opts.substep_limit,
                initial_substep: None,
            };
            solve_projected_exp(proj, times, &eo)
        }
        Integrator::Bdf1 | Integrator::Bdf2 | Integrator::Bdf3 => {
            let order = match opts.integrator {
                Integrator::Bdf1 => 1,
                Integrator::Bdf2 => 2,
                _ => 3,
            };
            let mut bo = BdfOptions::new(order, opts.h, opts.t_f);
            bo.newton_tol = opts.newton_tol;
            bo.newton_itermax = opts.newton_itermax;
            solve_projected_bdf_at(proj, &bo, times)
        }
        Integrator::Rosenbrock2 => {
            let ro = RosenbrockOptions {
                h: opts.h,
                t_f: opts.t_f,
                gamma: opts.rosenbrock_gamma,
                matrices: opts.rosenbrock_matrices,
            };
            solve_projected_rosenbrock2_at(proj, &ro, times)
        }
    }
}

fn numerical_rank(y: &Matrix, tol: f64) -> Result<usize> {
    if y.is_empty() {
        return Ok(0);
    }
    let (_, s, _) = svd_sorted(y)?;
    if s.is_empty() || s[0] == 0.0 {
        return Ok(0);
    }
    Ok(s.iter().filter(|&&x| x > tol * s[0]).count())
}

struct Check {
    traj: Trajectory,
    norms: ResidualNorms,
}

/// Extended block Arnoldi projection solver.
///
/// Both bases start from the constant-term factors, augmented with the
/// initial-value factors when `X0` is nonzero. Every `check_every` steps the
/// projected equation is integrated from 0 and the residual at `t_f` is
/// evaluated; the loop stops when the gated relative residual drops below
/// `tol_rel`, when both bases break down, or at `m_max`.
pub fn solve_ndre(problem: &NdreProblem, opts: &SolverOptions) -> Result<LowRankSolution> {
    opts.validate()?;
    let clock = Instant::now();
    let (n, p) = (problem.n(), problem.p());
    let method = format!("eba-{}", opts.integrator.name());
    let mut report = SolveReport::new(method, problem.label.clone(), n, p, problem.s_rank());
    report.seed = problem.seed;
    let times = opts.output_times();
    report.output_times = times.clone();
    let mut eval_times = times.clone();
    if (eval_times.last().copied().unwrap_or(0.0) - opts.t_f).abs() > 1e-12 * opts.t_f {
        eval_times.push(opts.t_f);
    }

    let q_norm_f = problem.constant_term_norm();
    let x0_norm = problem.x0.frobenius_norm();
    if q_norm_f == 0.0 && x0_norm == 0.0 {
        report.converged = true;
        report.steps = 1;
        report.final_residual = 0.0;
        report.final_residual_rel = 0.0;
        report.ranks = vec![0; times.len()];
        report.wall_seconds = clock.elapsed().as_secs_f64();
        report
            .notes
            .push("zero constant term and initial value: zero solution".into());
        return Ok(LowRankSolution {
            factors: vec![LowRankFactorPair::zeros(n, p); times.len()],
            projected: vec![Matrix::zeros(0, 0); times.len()],
            times,
            basis_a: Matrix::zeros(n, 0),
            basis_d: Matrix::zeros(p, 0),
            converged: true,
            residual: 0.0,
            residual_rel: 0.0,
            report,
        });
    }
    let q_norm_2 = if opts.gate == ResidualNorm::Spectral {
        problem.constant_term().spectral_norm()
    } else {
        q_norm_f
    };
    let scale = |r: f64| if q_norm_2 > 0.0 { r / q_norm_2 } else { r };

    let (start_a, start_d) = if x0_norm > 0.0 {
        (hcat(&[&problem.f, &problem.x0.z1]), hcat(&[&problem.g, &problem.x0.z2]))
    } else {
        (problem.f.clone(), problem.g.clone())
    };
    let dt = Transposed(&problem.d);
    let mut basis_a = start_basis(&problem.a, &start_a, opts, &mut report.side_a, &mut report.notes, "A")?;
    let mut basis_d = start_basis(&dt, &start_d, opts, &mut report.side_d, &mut report.notes, "D")?;

    let mut last: Option<Check> = None;
    let mut converged = false;
    let mut m = 0;
    while m < opts.m_max {
        m += 1;
        if !basis_a.is_breakdown() {
            basis_a.step(&problem.a)?;
        }
        if !basis_d.is_breakdown() {
            basis_d.step(&dt)?;
        }
        let both_done = basis_a.is_breakdown() && basis_d.is_breakdown();
        if m % opts.check_every != 0 && m != opts.m_max && !both_done {
            continue;
        }
        let proj = project_problem(problem, &basis_a, &basis_d)?;
        let traj = integrate(&proj, opts, &eval_times)?;
        let y = traj.last().clone();
        let ta = basis_a.subdiagonal_block();
        let td = basis_d.subdiagonal_block();
        let norms = residual_norm(&y, &ta, &td)?;
        let gated = match opts.gate {
            ResidualNorm::Frobenius => norms.frobenius,
            ResidualNorm::Spectral => norms.spectral,
        };
        let (pa, pd) = perturbation_norms(&basis_a, &basis_d);
        let spot = if opts.spot_checks {
            let (k, l) = y.shape();
            Some(SpotCheck {
                t_next_a: DenseArray::from(&ta),
                t_next_d: DenseArray::from(&td),
                y_last_rows: DenseArray::from(&y.rows(k - ta.ncols(), ta.ncols()).into_owned()),
                y_last_cols: DenseArray::from(&y.columns(l - td.ncols(), td.ncols()).into_owned()),
            })
        } else {
            None
        };
        report.history.push(ResidualRecord {
            m_or_step: m,
            time: opts.t_f,
            residual: norms.frobenius,
            residual_rel: scale(norms.frobenius),
            residual_2norm: norms.spectral,
            rank: numerical_rank(&y, opts.trunc_tol)?,
            wall_seconds: clock.elapsed().as_secs_f64(),
            dim_a: basis_a.dim(),
            dim_d: basis_d.dim(),
            perturbation_a: Some(pa),
            perturbation_d: Some(pd),
            newton_iterations: None,
            spot,
        });
        last = Some(Check { traj, norms });
        if scale(gated) < opts.tol_rel || both_done {
            converged = scale(gated) < opts.tol_rel;
            if both_done && !converged {
                report
                    .notes
                    .push("both bases reached invariant subspaces above the tolerance".into());
            }
            break;
        }
    }
    let check = last.expect("at least one residual check runs");

    let v = basis_a.basis();
    let w = basis_d.basis();
    let mut factors = Vec::with_capacity(times.len());
    let mut projected = Vec::with_capacity(times.len());
    for &t in &times {
        let y = check.traj.at(t).clone();
        let f = truncated_svd_factor(&y, opts.trunc_tol)?;
        report.ranks.push(f.rank());
        factors.push(LowRankFactorPair::new(&v * &f.z1, &w * &f.z2)?);
        projected.push(y);
    }
    report.converged = converged;
    report.steps = m;
    report.final_residual = check.norms.frobenius;
    report.final_residual_rel = scale(match opts.gate {
        ResidualNorm::Frobenius => check.norms.frobenius,
        ResidualNorm::Spectral => check.norms.spectral,
    });
    for (side, basis) in [(&mut report.side_a, &basis_a), (&mut report.side_d, &basis_d)] {
        side.dim = basis.dim();
        side.breakdown = basis.is_breakdown();
        side.deflations = basis.deflations().to_vec();
    }
    report.integrator = check.traj.stats.clone();
    report.wall_seconds = clock.elapsed().as_secs_f64();
    Ok(LowRankSolution {
        times,
        factors,
        projected,
        basis_a: v,
        basis_d: w,
        converged,
        residual: check.norms.frobenius,
        residual_rel: report.final_residual_rel,
        report,
    })
}

/// Integrator statistics are reported per check; this returns the totals of
/// the last check for callers that only keep the solution.
pub fn last_integrator_stats(sol: &LowRankSolution) -> &IntegratorStats {
    &sol.report.integrator
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{
        build_transport_problem, CouplingMatrix, DenseOperator, Operator, TransportParams, DENSE_GUARD,
    };
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(r: usize, c: usize, rng: &mut ChaCha8Rng) -> Matrix {
        Matrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    fn random_problem(n: usize, p: usize, seed: u64) -> NdreProblem {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random(n, n, &mut rng) * 0.3 + Matrix::identity(n, n) * 3.0;
        let d = random(p, p, &mut rng) * 0.3 + Matrix::identity(p, p) * 3.0;
        let s = random(p, n, &mut rng) * 0.05;
        let f = random(n, 1, &mut rng);
        let g = random(p, 1, &mut rng);
        NdreProblem::new(
            Operator::Dense(DenseOperator::new(a).unwrap()),
            Operator::Dense(DenseOperator::new(d).unwrap()),
            CouplingMatrix::Dense(s),
            f,
            g,
            LowRankFactorPair::zeros(n, p),
        )
        .unwrap()
    }

    #[test]
    fn zero_problem_converges_immediately() {
        let mut p = random_problem(10, 8, 1);
        p.f = Matrix::zeros(10, 1);
        let sol = solve_ndre(&p, &SolverOptions::default()).unwrap();
        assert!(sol.converged);
        assert_eq!(sol.report.steps, 1);
        assert_eq!(sol.final_factors().to_dense(), Matrix::zeros(10, 8));
    }

    #[test]
    fn residual_formula_matches_dense_residual() {
        // exact projected solution at t_f with the exponential integrator
        let p = random_problem(30, 25, 2);
        let opts = SolverOptions {
            integrator: Integrator::Exp,
            m_max: 3,
            check_every: 3,
            t_f: 0.5,
            ..SolverOptions::default()
        };
        let sol = solve_ndre(&p, &opts).unwrap();
        let dense = p.to_dense(DENSE_GUARD).unwrap();
        let x = sol.assemble_dense(0, DENSE_GUARD).unwrap();
        let y = &sol.projected[0];
        let proj_rhs = {
            let basis_a = &sol.basis_a;
            let basis_d = &sol.basis_d;
            // X' = V Y' W^T with Y' from the projected equation
            let t_a = basis_a.tr_mul(&(&dense.a * basis_a));
            let t_d = basis_d.tr_mul(&(&dense.d * basis_d));
            let s_m = basis_d.tr_mul(&(&dense.s * basis_a));
            let q_m = basis_a.tr_mul(&(&dense.q * basis_d));
            let yd = -(&t_a * y) - y * &t_d + y * &s_m * y + q_m;
            basis_a * yd * basis_d.transpose()
        };
        let r = dense.rhs(&x) - proj_rhs;
        let rec = sol.report.history.last().unwrap();
        assert!(
            (r.norm() - rec.residual).abs() <= 1e-8 * r.norm().max(1e-300),
            "{} vs {}",
            r.norm(),
            rec.residual
        );
        assert!((norm2(&r) - rec.residual_2norm).abs() <= 1e-8 * norm2(&r));
        assert!((rec.spot.as_ref().unwrap().recompute() - rec.residual).abs() <= 1e-14 * rec.residual);
        // Galerkin condition
        let g = sol.basis_a.tr_mul(&r) * &sol.basis_d;
        assert!(g.norm() < 1e-10);
    }

    #[test]
    fn transport_converges_and_matches_factor_form() {
        let p = build_transport_problem(&TransportParams::new(60, 0.5, 0.5).unwrap()).unwrap();
        let opts = SolverOptions {
            t_grid: vec![0.5, 1.0],
            ..SolverOptions::default()
        };
        let sol = solve_ndre(&p, &opts).unwrap();
        assert!(sol.converged, "residual {}", sol.residual_rel);
        let x = sol.assemble_dense(1, DENSE_GUARD).unwrap();
        assert!((sol.factors[1].to_dense() - &x).norm() <= 1e-10 * x.norm());
        let vtv = sol.basis_a.tr_mul(&sol.basis_a) - Matrix::identity(sol.basis_a.ncols(), sol.basis_a.ncols());
        assert!(vtv.norm() < 1e-10);
    }

    #[test]
    fn residual_norm_of_zero_is_zero() {
        let r = residual_norm(&Matrix::zeros(4, 4), &Matrix::identity(2, 2), &Matrix::identity(2, 2)).unwrap();
        assert_eq!(r.frobenius, 0.0);
        assert_eq!(r.spectral, 0.0);
    }

    #[test]
    fn assemble_identity_core() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let v = random(10, 3, &mut rng).qr().q();
        let w = random(8, 3, &mut rng).qr().q();
        let x = assemble_dense(&Matrix::identity(3, 3), &v, &w, DENSE_GUARD).unwrap();
        assert!((norm2(&x) - 1.0).abs() < 1e-13);
        assert!(assemble_dense(&Matrix::identity(3, 3), &v, &w, 10).is_err());
    }

    #[test]
    fn block_arnoldi_fallback_is_reported() {
        let p = random_problem(20, 20, 4);
        let opts = SolverOptions {
            block_arnoldi: true,
            m_max: 10,
            ..SolverOptions::default()
        };
        let sol = solve_ndre(&p, &opts).unwrap();
        assert_eq!(sol.report.side_a.kind, Some(KrylovKind::Block));
        assert!(sol.residual_rel.is_finite());
    }
}
