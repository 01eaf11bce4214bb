//! Full-scale BDF with Newton's method on every step. Each Newton iterate is
//! a large Sylvester equation with a low-rank right-hand side, solved by
//! Galerkin projection onto block Krylov subspaces. All iterates stay in
//! factored form.

use std::collections::VecDeque;
use std::sync::OnceLock;
use std::time::Instant;

use nalgebra::{Dyn, LU};
use serde::{Deserialize, Serialize};

use crate::dense::{solve_sylvester, truncated_svd_factor};
use crate::error::{NdreError, Result};
use crate::krylov::{KrylovBasis, KrylovKind, DEFLATION_TOL};
use crate::lowrank::{hcat, LowRankFactorPair};
use crate::problem::{CouplingMatrix, LinearOperator, NdreProblem, Operator, Transposed};
use crate::projected::{record_indices, uniform_steps, BdfCoefficients};
use crate::report::{ResidualRecord, SolveReport};
use crate::Matrix;

/// The last `order` iterates, most recent at the back.
#[derive(Debug, Clone)]
pub struct FactoredHistory {
    order: usize,
    entries: VecDeque<(f64, LowRankFactorPair)>,
}

impl FactoredHistory {
    pub fn new(order: usize, t0: f64, x0: LowRankFactorPair) -> Self {
        let mut entries = VecDeque::with_capacity(order);
        entries.push_back((t0, x0));
        FactoredHistory { order, entries }
    }

    pub fn push(&mut self, t: f64, x: LowRankFactorPair) {
        if self.entries.len() == self.order {
            self.entries.pop_front();
        }
        self.entries.push_back((t, x));
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// `i`-th most recent entry (0 is the newest).
    pub fn back(&self, i: usize) -> &LowRankFactorPair {
        &self.entries[self.entries.len() - 1 - i].1
    }

    pub fn latest(&self) -> (f64, &LowRankFactorPair) {
        let (t, x) = self.entries.back().expect("history is never empty");
        (*t, x)
    }
}

/// Factors of `h beta F G^T + sum_i alpha_i X_{k-i}`. The sign of a negative
/// coefficient is carried on the right factor, so the product is exact.
pub fn build_bdf_rhs_factors(
    history: &FactoredHistory,
    f: &Matrix,
    g: &Matrix,
    h: f64,
    beta: f64,
    alpha: &[f64],
) -> Result<(Matrix, Matrix)> {
    if history.len() < alpha.len() {
        return Err(NdreError::InvalidParameter(format!(
            "BDF with {} coefficients needs that many past values, history holds {}",
            alpha.len(),
            history.len()
        )));
    }
    let c = (h * beta).sqrt();
    let mut left = vec![f * c];
    let mut right = vec![g * c];
    for (i, &a) in alpha.iter().enumerate() {
        let x = history.back(i);
        if x.rank() == 0 || a == 0.0 {
            continue;
        }
        let r = a.abs().sqrt();
        left.push(&x.z1 * r);
        right.push(&x.z2 * (r * a.signum()));
    }
    let lrefs: Vec<&Matrix> = left.iter().collect();
    let rrefs: Vec<&Matrix> = right.iter().collect();
    Ok((hcat(&lrefs), hcat(&rrefs)))
}

/// `base - U V^T`, inverted with the Woodbury identity
/// `(M - U V^T)^-1 = M^-1 + M^-1 U (I - V^T M^-1 U)^-1 V^T M^-1`.
#[derive(Debug)]
pub struct ShiftedOperator {
    base: Operator,
    u: Matrix,
    v: Matrix,
    forward: OnceLock<std::result::Result<(Matrix, LU<f64, Dyn, Dyn>), String>>,
    backward: OnceLock<std::result::Result<(Matrix, LU<f64, Dyn, Dyn>), String>>,
}

impl ShiftedOperator {
    pub fn new(base: Operator, u: Matrix, v: Matrix) -> Result<Self> {
        let n = base.dim();
        if u.nrows() != n || v.nrows() != n || u.ncols() != v.ncols() {
            return Err(NdreError::Dimension(format!(
                "low-rank correction {}x{} / {}x{} for an operator of dimension {n}",
                u.nrows(),
                u.ncols(),
                v.nrows(),
                v.ncols()
            )));
        }
        Ok(ShiftedOperator {
            base,
            u,
            v,
            forward: OnceLock::new(),
            backward: OnceLock::new(),
        })
    }

    /// `scale * M + shift * I - U V^T`.
    pub fn from_base(op: &Operator, scale: f64, shift: f64, u: Matrix, v: Matrix) -> Result<Self> {
        Self::new(op.scaled_shift(scale, shift)?, u, v)
    }

    pub fn base(&self) -> &Operator {
        &self.base
    }

    pub fn correction_rank(&self) -> usize {
        self.u.ncols()
    }

    fn capacitance(&self, transpose: bool) -> Result<&(Matrix, LU<f64, Dyn, Dyn>)> {
        let cell = if transpose { &self.backward } else { &self.forward };
        let entry = cell.get_or_init(|| {
            let (u, v) = if transpose {
                (&self.v, &self.u)
            } else {
                (&self.u, &self.v)
            };
            let minv_u = if transpose {
                self.base.apply_inverse_transpose(u)
            } else {
                self.base.apply_inverse(u)
            }
            .map_err(|e| e.to_string())?;
            let r = u.ncols();
            let cap = Matrix::identity(r, r) - v.tr_mul(&minv_u);
            let lu = cap.clone().lu();
            let scale = cap.norm().max(1.0);
            let det_ok = (0..r).all(|i| lu.u()[(i, i)].abs() > 1e-14 * scale);
            if !det_ok {
                return Err("singular Woodbury capacitance matrix".to_string());
            }
            Ok((minv_u, lu))
        });
        entry.as_ref().map_err(|e| NdreError::Singular(e.clone()))
    }

    fn solve(&self, x: &Matrix, transpose: bool) -> Result<Matrix> {
        let y = if transpose {
            self.base.apply_inverse_transpose(x)?
        } else {
            self.base.apply_inverse(x)?
        };
        if self.u.ncols() == 0 {
            return Ok(y);
        }
        let (minv_u, lu) = self.capacitance(transpose)?;
        let v = if transpose { &self.u } else { &self.v };
        let coeff = lu
            .solve(&v.tr_mul(&y))
            .ok_or_else(|| NdreError::Singular("Woodbury capacitance solve".into()))?;
        Ok(y + minv_u * coeff)
    }
}

impl LinearOperator for ShiftedOperator {
    fn dim(&self) -> usize {
        self.base.dim()
    }
    fn apply(&self, x: &Matrix) -> Matrix {
        let y = self.base.apply(x);
        if self.u.ncols() == 0 {
            return y;
        }
        y - &self.u * self.v.tr_mul(x)
    }
    fn apply_transpose(&self, x: &Matrix) -> Matrix {
        let y = self.base.apply_transpose(x);
        if self.u.ncols() == 0 {
            return y;
        }
        y - &self.v * self.u.tr_mul(x)
    }
    fn apply_inverse(&self, x: &Matrix) -> Result<Matrix> {
        self.solve(x, false)
    }
    fn apply_inverse_transpose(&self, x: &Matrix) -> Result<Matrix> {
        self.solve(x, true)
    }
    fn supports_inverse(&self) -> bool {
        self.base.supports_inverse()
    }
}

/// Krylov subspace used by the low-rank Sylvester solver.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum InnerKrylov {
    /// Extended block Arnoldi when both operators can be inverted, else block
    /// Arnoldi.
    #[default]
    Auto,
    Extended,
    Block,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SylvesterOptions {
    pub tol: f64,
    pub itermax: usize,
    pub krylov: InnerKrylov,
    /// Residual check period in Krylov steps.
    pub check_every: usize,
    pub trunc_tol: f64,
}

impl Default for SylvesterOptions {
    fn default() -> Self {
        SylvesterOptions {
            tol: 1e-12,
            itermax: 50,
            krylov: InnerKrylov::Auto,
            check_every: 1,
            trunc_tol: 1e-12,
        }
    }
}

impl SylvesterOptions {
    /// Block Arnoldi preset. Polynomial subspaces need far more than 50 steps
    /// to reach 1e-12 on the stiff shifted transport operators.
    pub fn block_arnoldi() -> Self {
        SylvesterOptions {
            krylov: InnerKrylov::Block,
            itermax: 250,
            check_every: 10,
            ..SylvesterOptions::default()
        }
    }
}

#[derive(Debug, Clone)]
pub struct SylvesterOutcome {
    pub x: LowRankFactorPair,
    pub steps: usize,
    /// `|A X + X D + F G^T|_F / |F G^T|_F` from the projected identity.
    pub residual_rel: f64,
    pub dim_a: usize,
    pub dim_d: usize,
    pub kind: KrylovKind,
}

fn sylvester_basis(op: &dyn LinearOperator, start: &Matrix, kind: KrylovKind) -> Result<KrylovBasis> {
    match kind {
        KrylovKind::Extended => KrylovBasis::extended_with_tol(op, start, DEFLATION_TOL),
        KrylovKind::Block => KrylovBasis::block_with_tol(op, start, DEFLATION_TOL),
    }
}

/// Low-rank solution of `A X + X D + F G^T = 0` by Galerkin projection on
/// block Krylov subspaces of `(A, F)` and `(D^T, G)`.
pub fn sylvester_low_rank_krylov(
    a: &dyn LinearOperator,
    d: &dyn LinearOperator,
    f: &Matrix,
    g: &Matrix,
    opts: &SylvesterOptions,
) -> Result<SylvesterOutcome> {
    let (n, p) = (a.dim(), d.dim());
    if f.nrows() != n || g.nrows() != p || f.ncols() != g.ncols() {
        return Err(NdreError::Dimension(format!(
            "Sylvester right-hand side factors {}x{} and {}x{} for operators of size {n} and {p}",
            f.nrows(),
            f.ncols(),
            g.nrows(),
            g.ncols()
        )));
    }
    let kind = match opts.krylov {
        InnerKrylov::Block => KrylovKind::Block,
        InnerKrylov::Extended => KrylovKind::Extended,
        InnerKrylov::Auto => {
            if a.supports_inverse() && d.supports_inverse() {
                KrylovKind::Extended
            } else {
                KrylovKind::Block
            }
        }
    };
    let rhs = LowRankFactorPair::new(f.clone(), g.clone())?;
    let rhs_norm = rhs.frobenius_norm();
    if rhs_norm == 0.0 {
        return Ok(SylvesterOutcome {
            x: LowRankFactorPair::zeros(n, p),
            steps: 0,
            residual_rel: 0.0,
            dim_a: 0,
            dim_d: 0,
            kind,
        });
    }
    let dt = Transposed(d);
    let mut va = sylvester_basis(a, f, kind)?;
    let mut wd = sylvester_basis(&dt, g, kind)?;
    let mut best: Option<(Matrix, f64)> = None;
    for m in 1..=opts.itermax {
        if !va.is_breakdown() {
            va.step(a)?;
        }
        if !wd.is_breakdown() {
            wd.step(&dt)?;
        }
        let done = va.is_breakdown() && wd.is_breakdown();
        if m % opts.check_every.max(1) != 0 && m != opts.itermax && !done {
            continue;
        }
        let v = va.basis();
        let w = wd.basis();
        let t_a = va.projected();
        let t_d = wd.projected().transpose();
        let c = -(v.tr_mul(f) * w.tr_mul(g).transpose());
        let y = solve_sylvester(&t_a, &t_d, &c)?;
        let ta = va.subdiagonal_block();
        let td = wd.subdiagonal_block();
        let res = crate::eba::residual_norm(&y, &ta, &td)?.frobenius / rhs_norm;
        let conv = res < opts.tol;
        if conv || done || m == opts.itermax {
            if !conv {
                return Err(NdreError::NoConvergence {
                    what: "low-rank Krylov Sylvester solver",
                    iterations: m,
                    residual: res,
                });
            }
            let core = truncated_svd_factor(&y, opts.trunc_tol)?;
            return Ok(SylvesterOutcome {
                x: LowRankFactorPair::new(&v * &core.z1, &w * &core.z2)?,
                steps: m,
                residual_rel: res,
                dim_a: va.dim(),
                dim_d: wd.dim(),
                kind,
            });
        }
        best = Some((y, res));
    }
    let res = best.map(|b| b.1).unwrap_or(f64::INFINITY);
    Err(NdreError::NoConvergence {
        what: "low-rank Krylov Sylvester solver",
        iterations: opts.itermax,
        residual: res,
    })
}

#[derive(Debug, Clone)]
pub struct NewtonStep {
    pub x: LowRankFactorPair,
    pub sylvester: SylvesterOutcome,
}

/// One Newton iterate for `-A X - X D + X S X + F G^T = 0` (with `A`, `D`
/// the already shifted BDF operators and `S` the scaled coupling): solves
/// `(A - X S) X+ + X+ (D - S X) = F G^T - X S X` with the right-hand side in
/// factored form `[Z1, F] [Z2 M^T, -G]^T`, `M = Z2^T S Z1`.
pub fn newton_step_nare(
    current: &LowRankFactorPair,
    a: &Operator,
    d: &Operator,
    s: &CouplingMatrix,
    f: &Matrix,
    g: &Matrix,
    opts: &SylvesterOptions,
) -> Result<NewtonStep> {
    let (z1, z2) = (&current.z1, &current.z2);
    let (op_a, op_d, left, right) = if current.rank() == 0 {
        (
            ShiftedOperator::new(a.clone(), Matrix::zeros(a.dim(), 0), Matrix::zeros(a.dim(), 0))?,
            ShiftedOperator::new(d.clone(), Matrix::zeros(d.dim(), 0), Matrix::zeros(d.dim(), 0))?,
            f.clone(),
            -g,
        )
    } else {
        let s_z1 = s.apply(z1);
        let st_z2 = s.apply_transpose(z2);
        let m = z2.tr_mul(&s_z1);
        let op_a = ShiftedOperator::new(a.clone(), z1.clone(), st_z2)?;
        let op_d = ShiftedOperator::new(d.clone(), s_z1, z2.clone())?;
        let left = hcat(&[z1, f]);
        let right = hcat(&[&(z2 * m.transpose()), &(-g)]);
        (op_a, op_d, left, right)
    };
    let sylvester = sylvester_low_rank_krylov(&op_a, &op_d, &left, &right, opts)?;
    Ok(NewtonStep {
        x: sylvester.x.clone(),
        sylvester,
    })
}

/// Residual factors of `-A X - X D + X S X + F G^T` for factored `X`.
fn nare_residual_factors(
    x: &LowRankFactorPair,
    a: &Operator,
    d: &Operator,
    s: &CouplingMatrix,
    f: &Matrix,
    g: &Matrix,
) -> Result<LowRankFactorPair> {
    if x.rank() == 0 {
        return LowRankFactorPair::new(f.clone(), g.clone());
    }
    let m = x.z2.tr_mul(&s.apply(&x.z1));
    let left0 = -a.apply(&x.z1) + &x.z1 * m;
    let left = hcat(&[&left0, &(-&x.z1), f]);
    let right = hcat(&[&x.z2, &d.apply_transpose(&x.z2), g]);
    LowRankFactorPair::new(left, right)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BdfNewtonOptions {
    pub order: usize,
    pub h: f64,
    pub t_f: f64,
    /// Output times; empty means every step.
    pub t_grid: Vec<f64>,
    pub newton_tol: f64,
    pub newton_itermax: usize,
    pub sylvester: SylvesterOptions,
    pub trunc_tol: f64,
    pub r_max: usize,
}

impl Default for BdfNewtonOptions {
    fn default() -> Self {
        BdfNewtonOptions {
            order: 1,
            h: 0.01,
            t_f: 1.0,
            t_grid: Vec::new(),
            newton_tol: 1e-10,
            newton_itermax: 10,
            sylvester: SylvesterOptions::default(),
            trunc_tol: 1e-12,
            r_max: 100,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BdfNewtonSolution {
    pub times: Vec<f64>,
    pub factors: Vec<LowRankFactorPair>,
    pub report: SolveReport,
}

impl BdfNewtonSolution {
    pub fn final_factors(&self) -> &LowRankFactorPair {
        self.factors.last().expect("at least the initial value is stored")
    }
}

/// Relative update size below which a non-contracting Newton iteration is
/// accepted as having reached its rounding floor.
const NEWTON_FLOOR: f64 = 1e-8;

/// BDF(order) on the full equation, each step's algebraic Riccati equation
/// solved by Newton with low-rank Krylov Sylvester solves.
pub fn solve_ndre_bdf_newton(problem: &NdreProblem, opts: &BdfNewtonOptions) -> Result<BdfNewtonSolution> {
    let clock = Instant::now();
    let coeffs = BdfCoefficients::order(opts.order)?;
    let (steps, h) = uniform_steps(opts.h, opts.t_f)?;
    let (n, p) = (problem.n(), problem.p());
    let kind = match opts.sylvester.krylov {
        InnerKrylov::Auto => "auto",
        InnerKrylov::Extended => "eba",
        InnerKrylov::Block => "ba",
    };
    let mut report = SolveReport::new(
        format!("bdf{}-newton-{kind}", opts.order),
        problem.label.clone(),
        n,
        p,
        problem.s_rank(),
    );
    report.seed = problem.seed;
    let record: Vec<usize> = if opts.t_grid.is_empty() {
        (0..=steps).collect()
    } else {
        record_indices(&opts.t_grid, h, steps)
    };
    let mut rec = record.iter().peekable();
    let mut times = Vec::new();
    let mut factors = Vec::new();
    let x0 = problem.x0.compress(opts.trunc_tol, opts.r_max)?;
    if rec.peek() == Some(&&0) {
        rec.next();
        times.push(0.0);
        factors.push(x0.clone());
    }
    let mut history = FactoredHistory::new(coeffs.order, 0.0, x0);
    let mut ops: Vec<Option<(Operator, Operator, CouplingMatrix)>> = vec![None; coeffs.order + 1];
    let mut total_newton = 0usize;
    for step in 1..=steps {
        let t = step as f64 * h;
        let q = step.min(coeffs.order);
        let c = BdfCoefficients::order(q)?;
        let hb = h * c.beta;
        if ops[q].is_none() {
            ops[q] = Some((
                problem.a.scaled_shift(hb, 0.5)?,
                problem.d.scaled_shift(hb, 0.5)?,
                problem.s.scaled(hb),
            ));
        }
        let (a, d, s) = ops[q].as_ref().unwrap();
        let (ft, gt) = build_bdf_rhs_factors(&history, &problem.f, &problem.g, h, c.beta, &c.alpha)?;
        let rhs = LowRankFactorPair::new(ft, gt)?.compress(opts.trunc_tol, usize::MAX)?;
        let rhs_norm = rhs.frobenius_norm();
        let mut x = history.latest().1.clone();
        let mut prev_change = f64::INFINITY;
        let mut iterations = 0;
        let mut converged = false;
        let mut inner_dims = (0, 0);
        while iterations < opts.newton_itermax {
            iterations += 1;
            let next =
                newton_step_nare(&x, a, d, s, &rhs.z1, &rhs.z2, &opts.sylvester).map_err(|e| e.at_step(step, t))?;
            inner_dims = (next.sylvester.dim_a, next.sylvester.dim_d);
            let xn = next.x.compress(opts.trunc_tol, opts.r_max)?;
            let diff = xn.difference(&x)?.frobenius_norm();
            let base = x.frobenius_norm();
            let base = if base > 0.0 { base } else { xn.frobenius_norm() };
            let change = if base > 0.0 { diff / base } else { 0.0 };
            x = xn;
            if change < opts.newton_tol {
                converged = true;
                break;
            }
            if change > 0.5 * prev_change && change < NEWTON_FLOOR {
                report.integrator.newton_stagnations += 1;
                converged = true;
                break;
            }
            prev_change = change;
        }
        total_newton += iterations;
        report.integrator.max_newton_iterations = report.integrator.max_newton_iterations.max(iterations);
        if !converged {
            let res = nare_residual_factors(&x, a, d, s, &rhs.z1, &rhs.z2)?.frobenius_norm();
            return Err(NdreError::NoConvergence {
                what: "outer Newton iteration",
                iterations,
                residual: if rhs_norm > 0.0 { res / rhs_norm } else { res },
            }
            .at_step(step, t));
        }
        let res = nare_residual_factors(&x, a, d, s, &rhs.z1, &rhs.z2)?.frobenius_norm();
        let rel = if rhs_norm > 0.0 { res / rhs_norm } else { res };
        report.history.push(ResidualRecord {
            m_or_step: step,
            time: t,
            residual: res,
            residual_rel: rel,
            residual_2norm: f64::NAN,
            rank: x.rank(),
            wall_seconds: clock.elapsed().as_secs_f64(),
            dim_a: inner_dims.0,
            dim_d: inner_dims.1,
            perturbation_a: None,
            perturbation_d: None,
            newton_iterations: Some(iterations),
            spot: None,
        });
        history.push(t, x);
        if rec.peek() == Some(&&step) {
            rec.next();
            times.push(t);
            factors.push(history.latest().1.clone());
        }
    }
    report.integrator.steps = steps as u64;
    report.integrator.newton_iterations = total_newton;
    report.converged = true;
    report.steps = steps;
    if let Some(last) = report.history.last() {
        report.final_residual = last.residual;
        report.final_residual_rel = last.residual_rel;
    } else {
        report.final_residual = 0.0;
        report.final_residual_rel = 0.0;
    }
    report.output_times = times.clone();
    report.ranks = factors.iter().map(|f| f.rank()).collect();
    report.wall_seconds = clock.elapsed().as_secs_f64();
    Ok(BdfNewtonSolution { times, factors, report })
}
