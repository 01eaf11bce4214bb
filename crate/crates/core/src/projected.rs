//! Integrators for the small projected equation
//!
//! ```text
//! Y' = -T_A Y - Y T_D + Y S_m Y + F_m G_m^T,   Y(0) = Y0
//! ```
//!
//! Three schemes: exponential of the linear embedding with per-substep
//! renormalization (modified Davison-Maki), BDF(1..3) with Newton on every
//! step, and a two-stage Rosenbrock method.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::dense::{matrix_exponential, norm1, solve_small_nare_newton, SylvesterSchur};
use crate::error::{NdreError, Result};
use crate::Matrix;

#[derive(Debug, Clone)]
pub struct ProjectedNdre {
    pub t_a: Matrix,
    pub t_d: Matrix,
    pub s_m: Matrix,
    pub f_m: Matrix,
    pub g_m: Matrix,
    pub y0: Matrix,
}

impl ProjectedNdre {
    pub fn new(t_a: Matrix, t_d: Matrix, s_m: Matrix, f_m: Matrix, g_m: Matrix, y0: Matrix) -> Result<Self> {
        let (k, l) = (t_a.nrows(), t_d.nrows());
        let ok = t_a.ncols() == k
            && t_d.ncols() == l
            && s_m.shape() == (l, k)
            && f_m.nrows() == k
            && g_m.nrows() == l
            && f_m.ncols() == g_m.ncols()
            && y0.shape() == (k, l);
        if !ok {
            return Err(NdreError::Dimension(format!(
                "projected problem: T_A {:?}, T_D {:?}, S_m {:?}, F_m {:?}, G_m {:?}, Y0 {:?}",
                t_a.shape(),
                t_d.shape(),
                s_m.shape(),
                f_m.shape(),
                g_m.shape(),
                y0.shape()
            )));
        }
        Ok(ProjectedNdre {
            t_a,
            t_d,
            s_m,
            f_m,
            g_m,
            y0,
        })
    }

    pub fn k(&self) -> usize {
        self.t_a.nrows()
    }

    pub fn l(&self) -> usize {
        self.t_d.nrows()
    }

    /// `F_m G_m^T`.
    pub fn constant(&self) -> Matrix {
        &self.f_m * self.g_m.transpose()
    }

    /// Right-hand side of the projected equation at `y`.
    pub fn rhs(&self, y: &Matrix) -> Matrix {
        -(&self.t_a * y) - y * &self.t_d + y * (&self.s_m * y) + self.constant()
    }

    /// The embedding matrix `[[T_D, -S_m], [F_m G_m^T, -T_A]]`.
    pub fn embedding(&self) -> Matrix {
        let (k, l) = (self.k(), self.l());
        let mut h = Matrix::zeros(k + l, k + l);
        h.view_mut((0, 0), (l, l)).copy_from(&self.t_d);
        h.view_mut((0, l), (l, k)).copy_from(&(-&self.s_m));
        h.view_mut((l, 0), (k, l)).copy_from(&self.constant());
        h.view_mut((l, l), (k, k)).copy_from(&(-&self.t_a));
        h
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct IntegratorStats {
    /// Time steps (BDF, Rosenbrock) or exponential substeps.
    pub steps: u64,
    pub newton_iterations: usize,
    pub max_newton_iterations: usize,
    /// Steps whose Newton iteration stopped at its rounding floor.
    pub newton_stagnations: usize,
    /// Exponential scheme: number of substep halvings applied.
    pub halvings: usize,
    /// Exponential scheme: largest accepted 1-norm condition number of `Y1`.
    pub max_condition: f64,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub values: Vec<Matrix>,
    pub stats: IntegratorStats,
}

impl Trajectory {
    pub fn last(&self) -> &Matrix {
        self.values.last().expect("trajectory holds at least Y0")
    }

    /// Value at the stored time closest to `t`.
    pub fn at(&self, t: f64) -> &Matrix {
        let i = self
            .times
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - t).abs().total_cmp(&(b.1 - t).abs()))
            .map(|(i, _)| i)
            .unwrap_or(0);
        &self.values[i]
    }
}

fn check_grid(t_grid: &[f64]) -> Result<()> {
    if t_grid.is_empty() {
        return Err(NdreError::InvalidParameter("empty time grid".into()));
    }
    if t_grid.iter().any(|t| !t.is_finite()) || t_grid[0] < 0.0 {
        return Err(NdreError::InvalidParameter(
            "time grid must be finite and nonnegative".into(),
        ));
    }
    if t_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(NdreError::InvalidParameter(
            "time grid must be strictly increasing".into(),
        ));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// exponential scheme

#[derive(Debug, Clone, Serialize)]
pub struct ExpOptions {
    /// Largest accepted 1-norm condition number of `Y1` at a substep.
    pub cond_limit: f64,
    /// Maximum number of substep halvings before giving up.
    pub substep_limit: usize,
    /// First substep length tried on each interval; `None` uses the interval.
    pub initial_substep: Option<f64>,
}

impl Default for ExpOptions {
    fn default() -> Self {
        ExpOptions {
            cond_limit: 1e6,
            substep_limit: 60,
            initial_substep: None,
        }
    }
}

struct SubstepFailure {
    cond: f64,
}

/// Advance `y` over `len` in `2^level` substeps of the cached propagator.
fn exp_interval(
    emb: &Matrix,
    cache: &mut HashMap<u64, Matrix>,
    y: &Matrix,
    len: f64,
    base: f64,
    level: usize,
    cond_limit: f64,
    stats: &mut IntegratorStats,
) -> Result<std::result::Result<Matrix, SubstepFailure>> {
    let (k, l) = y.shape();
    let h = base / 2f64.powi(level as i32);
    let nsub = (len / h).ceil().max(1.0) as u64;
    let h = len / nsub as f64;
    let key = h.to_bits();
    if !cache.contains_key(&key) {
        match matrix_exponential(&(emb * h)) {
            Ok(e) => {
                cache.insert(key, e);
            }
            Err(NdreError::ExpOverflow { .. }) => return Ok(Err(SubstepFailure { cond: f64::INFINITY })),
            Err(e) => return Err(e),
        }
    }
    let e = &cache[&key];
    let e11 = e.view((0, 0), (l, l));
    let e12 = e.view((0, l), (l, k));
    let e21 = e.view((l, 0), (k, l));
    let e22 = e.view((l, l), (k, k));
    let mut y = y.clone();
    let mut max_cond: f64 = 0.0;
    for _ in 0..nsub {
        let y1 = e11 + e12 * &y;
        let y2 = e21 + e22 * &y;
        let inv = match y1.clone().try_inverse() {
            Some(inv) if inv.iter().all(|x| x.is_finite()) => inv,
            _ => return Ok(Err(SubstepFailure { cond: f64::INFINITY })),
        };
        let cond = norm1(&y1) * norm1(&inv);
        if !cond.is_finite() || cond > cond_limit {
            return Ok(Err(SubstepFailure { cond }));
        }
        max_cond = max_cond.max(cond);
        y = y2 * inv;
        if y.iter().any(|x| !x.is_finite()) {
            return Ok(Err(SubstepFailure { cond: f64::INFINITY }));
        }
    }
    stats.steps += nsub;
    stats.max_condition = stats.max_condition.max(max_cond);
    Ok(Ok(y))
}

/// Exponential scheme: `[Y1; Y2] = e^{h H} [I; Y]`, `Y <- Y2 Y1^-1` after
/// every substep. Substeps start at the interval length (or
/// `initial_substep`) and are halved whenever `Y1` is too ill-conditioned; the
/// level reached is kept for later intervals.
pub fn solve_projected_exp(proj: &ProjectedNdre, t_grid: &[f64], opts: &ExpOptions) -> Result<Trajectory> {
    check_grid(t_grid)?;
    let emb = proj.embedding();
    crate::dense::ensure_finite(&emb, "projected coefficients")?;
    let mut cache = HashMap::new();
    let mut stats = IntegratorStats::default();
    let mut y = proj.y0.clone();
    let mut t = 0.0;
    let mut level = 0usize;
    let mut times = Vec::with_capacity(t_grid.len());
    let mut values = Vec::with_capacity(t_grid.len());
    for &target in t_grid {
        let len = target - t;
        if len > 0.0 {
            let base = opts.initial_substep.map_or(len, |s| s.min(len));
            loop {
                match exp_interval(&emb, &mut cache, &y, len, base, level, opts.cond_limit, &mut stats)? {
                    Ok(next) => {
                        y = next;
                        break;
                    }
                    Err(fail) => {
                        if level >= opts.substep_limit {
                            return Err(NdreError::IllConditioned {
                                time: t,
                                cond: fail.cond,
                                halvings: level,
                            });
                        }
                        level += 1;
                        stats.halvings = stats.halvings.max(level);
                    }
                }
            }
        }
        t = target;
        times.push(target);
        values.push(y.clone());
    }
    Ok(Trajectory { times, values, stats })
}

// ---------------------------------------------------------------------------
// BDF

/// `Y_{k+1} = sum_i alpha_i Y_{k-i} + h beta F(Y_{k+1})`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BdfCoefficients {
    pub order: usize,
    pub beta: f64,
    pub alpha: Vec<f64>,
}

impl BdfCoefficients {
    pub fn order(s: usize) -> Result<Self> {
        let (beta, alpha) = match s {
            1 => (1.0, vec![1.0]),
            2 => (2.0 / 3.0, vec![4.0 / 3.0, -1.0 / 3.0]),
            3 => (6.0 / 11.0, vec![18.0 / 11.0, -9.0 / 11.0, 2.0 / 11.0]),
            _ => {
                return Err(NdreError::InvalidParameter(format!(
                    "BDF order must be 1, 2 or 3, got {s}"
                )))
            }
        };
        Ok(BdfCoefficients { order: s, beta, alpha })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BdfOptions {
    pub order: usize,
    pub h: f64,
    pub t_f: f64,
    pub newton_tol: f64,
    pub newton_itermax: usize,
}

impl BdfOptions {
    pub fn new(order: usize, h: f64, t_f: f64) -> Self {
        BdfOptions {
            order,
            h,
            t_f,
            newton_tol: 1e-12,
            newton_itermax: 30,
        }
    }
}

/// Number of steps and the effective step so that `steps * h == t_f`.
pub(crate) fn uniform_steps(h: f64, t_f: f64) -> Result<(usize, f64)> {
    if !(h > 0.0) || !h.is_finite() || !(t_f >= 0.0) || !t_f.is_finite() {
        return Err(NdreError::InvalidParameter(format!("step h = {h}, final time {t_f}")));
    }
    if t_f == 0.0 {
        return Ok((0, h));
    }
    let n = (t_f / h).round().max(1.0) as usize;
    Ok((n, t_f / n as f64))
}

/// Step indices closest to each requested time.
pub(crate) fn record_indices(times: &[f64], h: f64, steps: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = times
        .iter()
        .map(|&t| ((t / h).round().max(0.0) as usize).min(steps))
        .collect();
    idx.sort_unstable();
    idx.dedup();
    idx
}

/// BDF on the whole grid `0, h, ..., t_f`, every step recorded.
pub fn solve_projected_bdf(proj: &ProjectedNdre, opts: &BdfOptions) -> Result<Trajectory> {
    let (steps, _) = uniform_steps(opts.h, opts.t_f)?;
    let all: Vec<usize> = (0..=steps).collect();
    bdf_core(proj, opts, &all)
}

/// BDF recording only the steps nearest to `record_times`.
pub fn solve_projected_bdf_at(proj: &ProjectedNdre, opts: &BdfOptions, record_times: &[f64]) -> Result<Trajectory> {
    let (steps, h) = uniform_steps(opts.h, opts.t_f)?;
    bdf_core(proj, opts, &record_indices(record_times, h, steps))
}

fn bdf_core(proj: &ProjectedNdre, opts: &BdfOptions, record: &[usize]) -> Result<Trajectory> {
    let coeffs = BdfCoefficients::order(opts.order)?;
    let (steps, h) = uniform_steps(opts.h, opts.t_f)?;
    let (k, l) = (proj.k(), proj.l());
    let fg = proj.constant();
    let mut history: Vec<Matrix> = vec![proj.y0.clone()];
    let mut stats = IntegratorStats::default();
    let mut times = Vec::new();
    let mut values = Vec::new();
    let mut rec = record.iter().peekable();
    if rec.peek() == Some(&&0) {
        rec.next();
        times.push(0.0);
        values.push(proj.y0.clone());
    }
    // operators for each startup order
    let mut ops: Vec<Option<(Matrix, Matrix, Matrix)>> = vec![None; coeffs.order + 1];
    for step in 1..=steps {
        let q = step.min(coeffs.order);
        let c = BdfCoefficients::order(q)?;
        let hb = h * c.beta;
        if ops[q].is_none() {
            let a = Matrix::identity(k, k) * 0.5 + &proj.t_a * hb;
            let d = Matrix::identity(l, l) * 0.5 + &proj.t_d * hb;
            let s = &proj.s_m * hb;
            ops[q] = Some((a, d, s));
        }
        let (a, d, s) = ops[q].as_ref().unwrap();
        let mut rhs = &fg * hb;
        for (i, &al) in c.alpha.iter().enumerate() {
            rhs += &history[history.len() - 1 - i] * al;
        }
        let current = history.last().unwrap();
        let out = solve_small_nare_newton(a, d, s, &rhs, current, opts.newton_tol, opts.newton_itermax)
            .map_err(|e| e.at_step(step, step as f64 * h))?;
        stats.steps += 1;
        stats.newton_iterations += out.iterations;
        stats.max_newton_iterations = stats.max_newton_iterations.max(out.iterations);
        if out.stagnated {
            stats.newton_stagnations += 1;
        }
        history.push(out.x);
        if history.len() > coeffs.order {
            history.remove(0);
        }
        if rec.peek() == Some(&&step) {
            rec.next();
            times.push(step as f64 * h);
            values.push(history.last().unwrap().clone());
        }
    }
    Ok(Trajectory { times, values, stats })
}

// ---------------------------------------------------------------------------
// Rosenbrock

/// Stage matrices of the Rosenbrock scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum RosenbrockMatrices {
    /// `gamma T_A - I/(2h)` and `gamma T_D - I/(2h)`, fixed over the run.
    #[default]
    Literal,
    /// `-gamma (T_A - Y_k S_m) - I/(2h)` and `-gamma (T_D - S_m Y_k) - I/(2h)`,
    /// the Jacobian of the right-hand side at `Y_k`; rebuilt every step.
    Jacobian,
}

#[derive(Debug, Clone, Serialize)]
pub struct RosenbrockOptions {
    pub h: f64,
    pub t_f: f64,
    pub gamma: f64,
    pub matrices: RosenbrockMatrices,
}

impl RosenbrockOptions {
    pub fn new(h: f64, t_f: f64) -> Self {
        RosenbrockOptions {
            h,
            t_f,
            gamma: 1.0 + std::f64::consts::FRAC_1_SQRT_2,
            matrices: RosenbrockMatrices::Literal,
        }
    }
}

/// Two-stage Rosenbrock, every step recorded.
pub fn solve_projected_rosenbrock2(proj: &ProjectedNdre, opts: &RosenbrockOptions) -> Result<Trajectory> {
    let (steps, _) = uniform_steps(opts.h, opts.t_f)?;
    let all: Vec<usize> = (0..=steps).collect();
    rosenbrock_core(proj, opts, &all)
}

pub fn solve_projected_rosenbrock2_at(
    proj: &ProjectedNdre,
    opts: &RosenbrockOptions,
    record_times: &[f64],
) -> Result<Trajectory> {
    let (steps, h) = uniform_steps(opts.h, opts.t_f)?;
    rosenbrock_core(proj, opts, &record_indices(record_times, h, steps))
}

fn rosenbrock_core(proj: &ProjectedNdre, opts: &RosenbrockOptions, record: &[usize]) -> Result<Trajectory> {
    if !(opts.gamma.is_finite() && opts.gamma > 0.0) {
        return Err(NdreError::InvalidParameter(format!(
            "Rosenbrock gamma = {}",
            opts.gamma
        )));
    }
    let (steps, h) = uniform_steps(opts.h, opts.t_f)?;
    let (k, l) = (proj.k(), proj.l());
    let g = opts.gamma;
    let ik = Matrix::identity(k, k) * (0.5 / h);
    let il = Matrix::identity(l, l) * (0.5 / h);
    let fixed = match opts.matrices {
        RosenbrockMatrices::Literal => Some(SylvesterSchur::new(&(&proj.t_a * g - &ik), &(&proj.t_d * g - &il))?),
        RosenbrockMatrices::Jacobian => None,
    };
    let mut y = proj.y0.clone();
    let mut stats = IntegratorStats::default();
    let mut times = Vec::new();
    let mut values = Vec::new();
    let mut rec = record.iter().peekable();
    if rec.peek() == Some(&&0) {
        rec.next();
        times.push(0.0);
        values.push(y.clone());
    }
    for step in 1..=steps {
        let t = step as f64 * h;
        let local;
        let solver = match &fixed {
            Some(s) => s,
            None => {
                let ta = -(&proj.t_a - &y * &proj.s_m) * g - &ik;
                let td = -(&proj.t_d - &proj.s_m * &y) * g - &il;
                local = SylvesterSchur::new(&ta, &td).map_err(|e| e.at_step(step, t))?;
                &local
            }
        };
        let h1 = solver.solve(&(-proj.rhs(&y))).map_err(|e| e.at_step(step, t))?;
        let rhs2 = -proj.rhs(&(&y + &h1)) + &h1 * (2.0 / h);
        let h2 = solver.solve(&rhs2).map_err(|e| e.at_step(step, t))?;
        y += &h1 * 1.5 + &h2 * 0.5;
        if y.iter().any(|x| !x.is_finite()) {
            return Err(NdreError::NonFinite("Rosenbrock iterate").at_step(step, t));
        }
        stats.steps += 1;
        if rec.peek() == Some(&&step) {
            rec.next();
            times.push(t);
            values.push(y.clone());
        }
    }
    Ok(Trajectory { times, values, stats })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scalar_problem() -> ProjectedNdre {
        let one = Matrix::from_element(1, 1, 1.0);
        ProjectedNdre::new(
            one.clone(),
            one.clone(),
            Matrix::zeros(1, 1),
            one.clone(),
            one,
            Matrix::zeros(1, 1),
        )
        .unwrap()
    }

    fn exact_scalar(t: f64) -> f64 {
        0.5 * (1.0 - (-2.0 * t).exp())
    }

    fn random_problem(k: usize, seed: u64) -> ProjectedNdre {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut r = |rows: usize, cols: usize, scale: f64| {
            Matrix::from_fn(rows, cols, |_, _| scale * rng.random_range(-1.0..1.0))
        };
        let t_a = r(k, k, 0.3) + Matrix::identity(k, k) * 2.0;
        let t_d = r(k, k, 0.3) + Matrix::identity(k, k) * 1.5;
        let s_m = r(k, k, 0.2);
        let f_m = r(k, 2, 0.5);
        let g_m = r(k, 2, 0.5);
        let y0 = r(k, k, 0.1);
        ProjectedNdre::new(t_a, t_d, s_m, f_m, g_m, y0).unwrap()
    }

    #[test]
    fn bdf_table() {
        let c = BdfCoefficients::order(2).unwrap();
        assert_eq!(c.beta, 2.0 / 3.0);
        assert_eq!(c.alpha, vec![4.0 / 3.0, -1.0 / 3.0]);
        for s in 1..=3 {
            let c = BdfCoefficients::order(s).unwrap();
            assert!((c.alpha.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        }
        assert!(BdfCoefficients::order(4).is_err());
    }

    #[test]
    fn zero_dynamics_stay_zero() {
        let z = Matrix::zeros(3, 3);
        let p = ProjectedNdre::new(
            Matrix::identity(3, 3),
            Matrix::identity(3, 3),
            z.clone(),
            Matrix::zeros(3, 1),
            Matrix::zeros(3, 1),
            z.clone(),
        )
        .unwrap();
        let e = solve_projected_exp(&p, &[0.5, 1.0], &ExpOptions::default()).unwrap();
        assert!(e.values.iter().all(|v| v == &z));
        let b = solve_projected_bdf(&p, &BdfOptions::new(2, 0.1, 1.0)).unwrap();
        assert!(b.values.iter().all(|v| v == &z));
        let r = solve_projected_rosenbrock2(&p, &RosenbrockOptions::new(0.1, 1.0)).unwrap();
        assert!(r.values.iter().all(|v| v == &z));
    }

    #[test]
    fn exp_scalar_closed_form() {
        let tr = solve_projected_exp(&scalar_problem(), &[0.25, 0.5, 1.0, 3.0], &ExpOptions::default()).unwrap();
        for (t, v) in tr.times.iter().zip(&tr.values) {
            assert!((v[(0, 0)] - exact_scalar(*t)).abs() < 1e-13, "t = {t}");
        }
    }

    #[test]
    fn bdf1_scalar_closed_form() {
        let tr = solve_projected_bdf(&scalar_problem(), &BdfOptions::new(1, 1e-4, 1.0)).unwrap();
        assert_eq!(tr.times.len(), 10_001);
        assert!((tr.last()[(0, 0)] - exact_scalar(1.0)).abs() < 1e-4);
    }

    fn scalar_error(order: usize, h: f64) -> f64 {
        let tr = solve_projected_bdf(&scalar_problem(), &BdfOptions::new(order, h, 1.0)).unwrap();
        (tr.last()[(0, 0)] - exact_scalar(1.0)).abs()
    }

    fn rosenbrock_error(h: f64) -> f64 {
        let tr = solve_projected_rosenbrock2(&scalar_problem(), &RosenbrockOptions::new(h, 1.0)).unwrap();
        (tr.last()[(0, 0)] - exact_scalar(1.0)).abs()
    }

    #[test]
    fn bdf2_is_second_order() {
        let ratio = scalar_error(2, 0.01) / scalar_error(2, 0.005);
        assert!((3.5..=4.5).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn rosenbrock_is_second_order() {
        let ratio = rosenbrock_error(0.01) / rosenbrock_error(0.005);
        assert!((3.5..=4.5).contains(&ratio), "ratio {ratio}");
        assert!(rosenbrock_error(1e-3) < 1e-5);
    }

    #[test]
    fn schemes_agree_on_random_problem() {
        for seed in 0..3 {
            let p = random_problem(6, seed);
            let e = solve_projected_exp(&p, &[1.0], &ExpOptions::default()).unwrap();
            let b3 = solve_projected_bdf(&p, &BdfOptions::new(3, 1e-3, 1.0)).unwrap();
            let r = solve_projected_rosenbrock2(&p, &RosenbrockOptions::new(1e-3, 1.0)).unwrap();
            let mut rj = RosenbrockOptions::new(1e-3, 1.0);
            rj.matrices = RosenbrockMatrices::Jacobian;
            let rj = solve_projected_rosenbrock2(&p, &rj).unwrap();
            let ye = e.last();
            assert!((b3.last() - ye).norm() < 1e-4);
            assert!((r.last() - ye).norm() < 1e-4);
            assert!((rj.last() - ye).norm() < 1e-4);
            let b1 = solve_projected_bdf(&p, &BdfOptions::new(1, 1e-4, 1.0)).unwrap();
            assert!((b1.last() - ye).norm() < 1e-3);
        }
    }

    #[test]
    fn equilibrium_is_preserved() {
        let mut p = random_problem(5, 7);
        let eq = solve_small_nare_newton(&p.t_a, &p.t_d, &p.s_m, &p.constant(), &Matrix::zeros(5, 5), 1e-14, 50)
            .unwrap()
            .x;
        p.y0 = eq.clone();
        let grid: Vec<f64> = (1..=4).map(|i| i as f64 * 0.25).collect();
        for v in solve_projected_exp(&p, &grid, &ExpOptions::default()).unwrap().values {
            assert!((v - &eq).norm() < 1e-8);
        }
        for v in solve_projected_bdf(&p, &BdfOptions::new(3, 0.01, 1.0)).unwrap().values {
            assert!((v - &eq).norm() < 1e-8);
        }
        for v in solve_projected_rosenbrock2(&p, &RosenbrockOptions::new(0.01, 1.0))
            .unwrap()
            .values
        {
            assert!((v - &eq).norm() < 1e-8);
        }
    }

    #[test]
    fn exp_substep_halving_invariance() {
        let p = random_problem(6, 11);
        let coarse = solve_projected_exp(&p, &[1.0], &ExpOptions::default()).unwrap();
        let fine = solve_projected_exp(
            &p,
            &[1.0],
            &ExpOptions {
                initial_substep: Some(1.0 / 64.0),
                ..ExpOptions::default()
            },
        )
        .unwrap();
        assert!((coarse.last() - fine.last()).norm() < 1e-10 * coarse.last().norm().max(1.0));
    }

    #[test]
    fn exp_halves_on_stiff_problem() {
        // separated scales make one large substep ill-conditioned
        let t = Matrix::from_diagonal(&nalgebra::dvector![40.0, 0.5]);
        let id = Matrix::identity(2, 2);
        let p = ProjectedNdre::new(t.clone(), t, Matrix::zeros(2, 2), id.clone(), id, Matrix::zeros(2, 2)).unwrap();
        let tr = solve_projected_exp(&p, &[1.0], &ExpOptions::default()).unwrap();
        assert!(tr.stats.halvings > 0);
        assert!(tr.stats.max_condition <= 1e12);
        for (i, a) in [40.0f64, 0.5].into_iter().enumerate() {
            let exact = (1.0 - (-2.0 * a).exp()) / (2.0 * a);
            assert!((tr.last()[(i, i)] - exact).abs() < 1e-12);
        }
        assert!(tr.last()[(0, 1)].abs() < 1e-12);
    }

    #[test]
    fn bdf_records_requested_times() {
        let tr = solve_projected_bdf_at(&scalar_problem(), &BdfOptions::new(1, 0.01, 1.0), &[0.0, 0.5, 1.0]).unwrap();
        assert_eq!(tr.times.len(), 3);
        assert!((tr.times[1] - 0.5).abs() < 1e-14);
    }

    #[test]
    fn rejects_bad_dimensions() {
        let one = Matrix::from_element(1, 1, 1.0);
        assert!(ProjectedNdre::new(
            one.clone(),
            one.clone(),
            Matrix::zeros(2, 1),
            one.clone(),
            one.clone(),
            one
        )
        .is_err());
    }
}
