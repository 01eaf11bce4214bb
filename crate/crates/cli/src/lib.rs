//! Experiment runner for the NDRE solvers: builds a problem from a run
//! configuration, solves it with one or more methods and writes reports,
//! residual histories, oracle comparisons and factor files.

pub mod config;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndre_core::bdf_newton::{
    solve_ndre_bdf_newton, BdfNewtonOptions, BdfNewtonSolution, InnerKrylov, SylvesterOptions,
};
use ndre_core::bounds::{galerkin_bound_inputs, nonlocal_error_bound, BoundInputs, ErrorBound};
use ndre_core::eba::{solve_ndre, Integrator, LowRankSolution, SolverOptions};
use ndre_core::io::{load_problem, write_factors};
use ndre_core::oracles::{integrate_dense, solve_ndre_direct_exp, OracleOptions, ORACLE_MAX_DIM};
use ndre_core::problem::{build_guo_problem, build_transport_problem, NdreProblem, TransportParams, DENSE_GUARD};
use ndre_core::report::SolveReport;
use ndre_core::{LowRankFactorPair, NdreError};
use serde::{Deserialize, Serialize};

pub use config::{ConfigError, ConfigFile, Method, OracleKind, Overrides, ProblemKind, RunSpec};

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Solver(NdreError),
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Solver(_) | CliError::Io(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Solver(e) => write!(f, "solver error: {e}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.0)
    }
}

impl From<NdreError> for CliError {
    fn from(e: NdreError) -> Self {
        CliError::Solver(e)
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_NOT_CONVERGED: i32 = 3;

pub fn build_problem(spec: &RunSpec) -> Result<NdreProblem, CliError> {
    let p = match spec.problem {
        ProblemKind::Transport => build_transport_problem(&TransportParams::new(spec.n, spec.c, spec.alpha)?)?,
        ProblemKind::Guo => build_guo_problem(spec.n, spec.seed)?,
        ProblemKind::File => {
            let files = spec
                .files
                .as_ref()
                .ok_or_else(|| CliError::Config("problem.files: required for problem kind 'file'".into()))?;
            load_problem(files, &spec.base_dir)?
        }
    };
    Ok(p)
}

pub enum Solution {
    Projection(LowRankSolution),
    Newton(BdfNewtonSolution),
}

impl Solution {
    pub fn times(&self) -> &[f64] {
        match self {
            Solution::Projection(s) => &s.times,
            Solution::Newton(s) => &s.times,
        }
    }

    pub fn factors(&self) -> &[LowRankFactorPair] {
        match self {
            Solution::Projection(s) => &s.factors,
            Solution::Newton(s) => &s.factors,
        }
    }

    pub fn final_factors(&self) -> &LowRankFactorPair {
        self.factors().last().expect("solutions hold at least one output time")
    }

    pub fn report(&self) -> &SolveReport {
        match self {
            Solution::Projection(s) => &s.report,
            Solution::Newton(s) => &s.report,
        }
    }
}

fn integrator(method: Method) -> Option<Integrator> {
    match method {
        Method::EbaExp => Some(Integrator::Exp),
        Method::EbaBdf1 => Some(Integrator::Bdf1),
        Method::EbaBdf2 => Some(Integrator::Bdf2),
        Method::EbaBdf3 => Some(Integrator::Bdf3),
        Method::EbaRosenbrock => Some(Integrator::Rosenbrock2),
        Method::Bdf1NewtonBa | Method::Bdf1NewtonEba => None,
    }
}

pub fn solver_options(spec: &RunSpec, integrator: Integrator) -> SolverOptions {
    SolverOptions {
        m_max: spec.m_max,
        check_every: spec.check_every,
        tol_rel: spec.tol,
        integrator,
        h: spec.h,
        t_f: spec.t_f,
        t_grid: spec.output_times(),
        trunc_tol: spec.trunc_tol,
        cond_limit: spec.cond_limit,
        block_arnoldi: spec.block_arnoldi,
        ..SolverOptions::default()
    }
}

pub fn newton_options(spec: &RunSpec, method: Method) -> BdfNewtonOptions {
    let sylvester = match method {
        Method::Bdf1NewtonBa => SylvesterOptions::block_arnoldi(),
        _ => SylvesterOptions {
            krylov: InnerKrylov::Extended,
            ..SylvesterOptions::default()
        },
    };
    BdfNewtonOptions {
        order: 1,
        h: spec.h,
        t_f: spec.t_f,
        t_grid: spec.output_times(),
        sylvester,
        trunc_tol: spec.trunc_tol,
        ..BdfNewtonOptions::default()
    }
}

pub fn solve(problem: &NdreProblem, spec: &RunSpec, method: Method) -> Result<Solution, NdreError> {
    match integrator(method) {
        Some(i) => Ok(Solution::Projection(solve_ndre(problem, &solver_options(spec, i))?)),
        None => Ok(Solution::Newton(solve_ndre_bdf_newton(
            problem,
            &newton_options(spec, method),
        )?)),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub time: f64,
    pub x11: f64,
    pub x11_oracle: f64,
    pub abs_diff_x11: f64,
    pub max_abs_diff: f64,
    pub rel_fro_diff: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OracleSummary {
    pub kind: OracleKind,
    pub max_abs_diff_x11: f64,
    pub max_abs_diff: f64,
    pub max_rel_fro_diff: f64,
    pub rows: Vec<ComparisonRow>,
}

fn x11(f: &LowRankFactorPair) -> f64 {
    f.z1.row(0).dot(&f.z2.row(0))
}

/// Dense reference at the solution's output times. `dense-bdf` uses the
/// method's own step and BDF order (order 2 for exp and Rosenbrock), so it
/// isolates the projection error.
pub fn oracle_comparison(
    problem: &NdreProblem,
    spec: &RunSpec,
    method: Method,
    sol: &Solution,
    kind: OracleKind,
) -> Result<Option<OracleSummary>, NdreError> {
    if kind == OracleKind::None {
        return Ok(None);
    }
    let dense = problem.to_dense(DENSE_GUARD)?;
    let times = sol.times();
    let traj = match kind {
        OracleKind::DirectExp => solve_ndre_direct_exp(&dense, times, &OracleOptions::default())?,
        _ => {
            let order = match integrator(method) {
                Some(Integrator::Bdf2) => 2,
                Some(Integrator::Bdf3) => 3,
                Some(Integrator::Bdf1) | None => 1,
                Some(_) => 2,
            };
            integrate_dense(&dense, spec.h, spec.t_f, order, times)?
        }
    };
    let mut rows = Vec::with_capacity(times.len());
    for (&t, f) in times.iter().zip(sol.factors()) {
        let x = f.to_dense();
        let xo = traj.at(t);
        let diff = &x - xo;
        let max_abs = diff.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let denom = xo.norm();
        rows.push(ComparisonRow {
            time: t,
            x11: x11(f),
            x11_oracle: xo[(0, 0)],
            abs_diff_x11: (x11(f) - xo[(0, 0)]).abs(),
            max_abs_diff: max_abs,
            rel_fro_diff: if denom > 0.0 { diff.norm() / denom } else { diff.norm() },
        });
    }
    let fold = |g: fn(&ComparisonRow) -> f64| rows.iter().map(g).fold(0.0f64, f64::max);
    Ok(Some(OracleSummary {
        kind,
        max_abs_diff_x11: fold(|r| r.abs_diff_x11),
        max_abs_diff: fold(|r| r.max_abs_diff),
        max_rel_fro_diff: fold(|r| r.rel_fro_diff),
        rows,
    }))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundSummary {
    pub inputs: Option<BoundInputs>,
    pub a0: Option<f64>,
    pub a1: Option<f64>,
    /// `None` when the bound is infeasible or was not evaluated.
    pub rho: Option<f64>,
    pub note: String,
}

/// Error bound for a projection solution; dense assembly limits it to
/// small problems.
pub fn bound_summary(problem: &NdreProblem, sol: &Solution) -> BoundSummary {
    let skipped = |note: String| BoundSummary {
        inputs: None,
        a0: None,
        a1: None,
        rho: None,
        note,
    };
    let Solution::Projection(s) = sol else {
        return skipped("bound applies to projection methods only".into());
    };
    if problem.n() + problem.p() > ORACLE_MAX_DIM {
        return skipped(format!("skipped: n + p > {ORACLE_MAX_DIM}"));
    }
    let inputs = match galerkin_bound_inputs(problem, s, DENSE_GUARD) {
        Ok(i) => i,
        Err(e) => return skipped(format!("bound inputs failed: {e}")),
    };
    let (a0, a1) = (inputs.a0(), inputs.a1());
    match nonlocal_error_bound(&inputs) {
        Ok(ErrorBound::Feasible { rho, .. }) => BoundSummary {
            inputs: Some(inputs),
            a0: Some(a0),
            a1: Some(a1),
            rho: Some(rho),
            note: "feasible".into(),
        },
        Ok(ErrorBound::Infeasible { a0a1 }) => BoundSummary {
            inputs: Some(inputs),
            a0: Some(a0),
            a1: Some(a1),
            rho: None,
            note: format!("infeasible: 4 a0 a1 = {:.3e} > 1", 4.0 * a0a1),
        },
        Err(e) => skipped(format!("bound failed: {e}")),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MethodRun {
    pub method: Method,
    pub converged: bool,
    pub final_residual_rel: Option<f64>,
    pub wall_seconds: f64,
    pub error: Option<String>,
    pub report: Option<SolveReport>,
    pub bounds: Option<BoundSummary>,
    pub oracle: Option<OracleSummary>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub config: RunSpec,
    pub runs: Vec<MethodRun>,
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| io_err(path, e))
}

pub fn write_residuals_csv(path: &Path, report: &SolveReport) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    let err = |e: csv::Error| io_err(path, e);
    w.write_record([
        "m_or_step",
        "time",
        "residual_rel",
        "rank",
        "wall_seconds",
        "residual",
        "residual_2norm",
        "dim_a",
        "dim_d",
        "newton_iterations",
    ])
    .map_err(err)?;
    for r in &report.history {
        w.write_record([
            r.m_or_step.to_string(),
            format!("{:e}", r.time),
            format!("{:e}", r.residual_rel),
            r.rank.to_string(),
            format!("{:e}", r.wall_seconds),
            format!("{:e}", r.residual),
            format!("{:e}", r.residual_2norm),
            r.dim_a.to_string(),
            r.dim_d.to_string(),
            r.newton_iterations.map_or(String::new(), |k| k.to_string()),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

pub fn write_oracle_csv(path: &Path, summary: &OracleSummary) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    for r in &summary.rows {
        w.serialize(r).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

fn run_method(problem: &NdreProblem, spec: &RunSpec, method: Method, dir: &Path) -> Result<MethodRun, CliError> {
    let clock = Instant::now();
    let sol = solve(problem, spec, method)?;
    let wall_seconds = clock.elapsed().as_secs_f64();
    let report = sol.report().clone();
    let oracle = oracle_comparison(problem, spec, method, &sol, spec.oracle)?;
    let bounds = spec.bounds.then(|| bound_summary(problem, &sol));
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    write_residuals_csv(&dir.join("residuals.csv"), &report)?;
    if let Some(o) = &oracle {
        write_oracle_csv(&dir.join("comparison.csv"), o)?;
    }
    if spec.factors {
        write_factors(&dir.join("factors"), sol.factors())?;
        let mut times = String::new();
        for t in sol.times() {
            let _ = writeln!(times, "{t:e}");
        }
        write_text(&dir.join("factors").join("times.txt"), &times)?;
    }
    Ok(MethodRun {
        method,
        converged: report.converged,
        final_residual_rel: Some(report.final_residual_rel),
        wall_seconds,
        error: None,
        report: Some(report),
        bounds,
        oracle,
    })
}

pub struct RunOutcome {
    pub report: RunReport,
    pub exit_code: i32,
}

/// Solves with every configured method. A single method writes into the
/// output directory itself, several into one subdirectory each.
pub fn run(spec: &RunSpec) -> Result<RunOutcome, CliError> {
    let problem = build_problem(spec)?;
    fs::create_dir_all(&spec.out).map_err(|e| io_err(&spec.out, e))?;
    let mut runs = Vec::new();
    let mut first_error = None;
    for &method in &spec.methods {
        let dir = if spec.methods.len() == 1 {
            spec.out.clone()
        } else {
            spec.out.join(method.name())
        };
        match run_method(&problem, spec, method, &dir) {
            Ok(r) => runs.push(r),
            Err(e) => {
                runs.push(failed_run(method, &e));
                first_error.get_or_insert(e);
            }
        }
    }
    let report = RunReport {
        config: spec.clone(),
        runs,
    };
    write_report(&spec.out.join("report.json"), &report)?;
    if let Some(e) = first_error {
        return Err(e);
    }
    let exit_code = if report.runs.iter().all(|r| r.converged) {
        EXIT_OK
    } else {
        EXIT_NOT_CONVERGED
    };
    Ok(RunOutcome { report, exit_code })
}

fn failed_run(method: Method, e: &CliError) -> MethodRun {
    MethodRun {
        method,
        converged: false,
        final_residual_rel: None,
        wall_seconds: 0.0,
        error: Some(e.to_string()),
        report: None,
        bounds: None,
        oracle: None,
    }
}

fn write_report(path: &Path, report: &RunReport) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(report).map_err(|e| io_err(path, e))?;
    write_text(path, &text)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairRow {
    pub method_a: Method,
    pub method_b: Method,
    /// `|X_a - X_b|_F / |X_b|_F` at the final time, from the factors.
    pub rel_fro_diff: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompareReport {
    pub config: RunSpec,
    pub methods: Vec<MethodRun>,
    pub pairs: Vec<PairRow>,
}

impl CompareReport {
    pub fn pair(&self, a: Method, b: Method) -> Option<&PairRow> {
        self.pairs
            .iter()
            .find(|p| (p.method_a, p.method_b) == (a, b) || (p.method_a, p.method_b) == (b, a))
    }

    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<18} {:>10} {:>14} {:>10} {:>6}  {}",
            "method", "status", "residual_rel", "seconds", "rank", "error"
        );
        for m in &self.methods {
            let rank = m.report.as_ref().and_then(|r| r.ranks.last().copied());
            let _ = writeln!(
                s,
                "{:<18} {:>10} {:>14} {:>10.2} {:>6}  {}",
                m.method.name(),
                status(m),
                m.final_residual_rel.map_or("-".into(), |r| format!("{r:.3e}")),
                m.wall_seconds,
                rank.map_or("-".into(), |r| r.to_string()),
                m.error.as_deref().unwrap_or("")
            );
        }
        let _ = writeln!(s);
        let _ = writeln!(s, "{:<18} {:<18} {:>14}", "method", "reference", "rel_fro_diff");
        for p in &self.pairs {
            let _ = writeln!(
                s,
                "{:<18} {:<18} {:>14}",
                p.method_a.name(),
                p.method_b.name(),
                p.rel_fro_diff.map_or("failed".into(), |d| format!("{d:.3e}"))
            );
        }
        s
    }
}

fn status(m: &MethodRun) -> &'static str {
    match (&m.error, m.converged) {
        (Some(_), _) => "failed",
        (None, true) => "converged",
        (None, false) => "unconverged",
    }
}

pub fn write_compare_csv(path: &Path, report: &CompareReport) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    let err = |e: csv::Error| io_err(path, e);
    w.write_record([
        "row",
        "method",
        "reference",
        "status",
        "residual_rel",
        "wall_seconds",
        "rel_fro_diff",
    ])
    .map_err(err)?;
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:e}"));
    for m in &report.methods {
        w.write_record([
            "method".to_string(),
            m.method.name().to_string(),
            String::new(),
            status(m).to_string(),
            opt(m.final_residual_rel),
            format!("{:e}", m.wall_seconds),
            String::new(),
        ])
        .map_err(err)?;
    }
    for p in &report.pairs {
        w.write_record([
            "pair".to_string(),
            p.method_a.name().to_string(),
            p.method_b.name().to_string(),
            if p.rel_fro_diff.is_some() { "ok" } else { "failed" }.to_string(),
            String::new(),
            String::new(),
            opt(p.rel_fro_diff),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// Solves one problem with every configured method and tabulates pairwise
/// final-time differences. A failing member is flagged in its row; the
/// others are still reported.
pub fn compare(spec: &RunSpec) -> Result<CompareReport, CliError> {
    if spec.methods.len() < 2 {
        return Err(CliError::Config(format!(
            "solver.methods: compare needs at least two methods, got {}",
            spec.methods.len()
        )));
    }
    let problem = build_problem(spec)?;
    let mut methods = Vec::new();
    let mut finals: Vec<Option<LowRankFactorPair>> = Vec::new();
    for &method in &spec.methods {
        let clock = Instant::now();
        match solve(&problem, spec, method) {
            Ok(sol) => {
                let report = sol.report().clone();
                methods.push(MethodRun {
                    method,
                    converged: report.converged,
                    final_residual_rel: Some(report.final_residual_rel),
                    wall_seconds: clock.elapsed().as_secs_f64(),
                    error: None,
                    report: Some(report),
                    bounds: None,
                    oracle: None,
                });
                finals.push(Some(sol.final_factors().clone()));
            }
            Err(e) => {
                let mut r = failed_run(method, &CliError::Solver(e));
                r.wall_seconds = clock.elapsed().as_secs_f64();
                methods.push(r);
                finals.push(None);
            }
        }
    }
    let mut pairs = Vec::new();
    for i in 0..finals.len() {
        for j in i + 1..finals.len() {
            let d = match (&finals[i], &finals[j]) {
                (Some(x), Some(y)) => x.relative_difference(y).ok(),
                _ => None,
            };
            pairs.push(PairRow {
                method_a: spec.methods[i],
                method_b: spec.methods[j],
                rel_fro_diff: d,
            });
        }
    }
    let report = CompareReport {
        config: spec.clone(),
        methods,
        pairs,
    };
    fs::create_dir_all(&spec.out).map_err(|e| io_err(&spec.out, e))?;
    write_compare_csv(&spec.out.join("comparison.csv"), &report)?;
    write_text(&spec.out.join("comparison.txt"), &report.table())?;
    let text = serde_json::to_string_pretty(&report).map_err(|e| io_err(&spec.out, e))?;
    write_text(&spec.out.join("report.json"), &text)?;
    Ok(report)
}

#[derive(Debug, Clone, Serialize)]
pub struct SpotResult {
    pub method: Method,
    pub m_or_step: usize,
    pub stored: f64,
    pub recomputed: f64,
    pub rel_err: f64,
}

/// Recomputes every stored residual in `<dir>/report.json` from its
/// serialized subdiagonal blocks and solution slices.
pub fn check(dir: &Path, tol: f64) -> Result<(Vec<SpotResult>, bool), CliError> {
    let path: PathBuf = dir.join("report.json");
    let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| io_err(&path, e))?;
    let runs = value
        .get("runs")
        .or_else(|| value.get("methods"))
        .cloned()
        .ok_or_else(|| io_err(&path, "no 'runs' or 'methods' entry"))?;
    let runs: Vec<MethodRun> = serde_json::from_value(runs).map_err(|e| io_err(&path, e))?;
    let mut out = Vec::new();
    let mut ok = true;
    for r in &runs {
        let Some(rep) = &r.report else { continue };
        for rec in &rep.history {
            let Some(spot) = &rec.spot else { continue };
            let recomputed = spot.recompute();
            let rel_err = (recomputed - rec.residual).abs() / rec.residual.abs().max(f64::MIN_POSITIVE);
            if rel_err > tol {
                ok = false;
            }
            out.push(SpotResult {
                method: r.method,
                m_or_step: rec.m_or_step,
                stored: rec.residual,
                recomputed,
                rel_err,
            });
        }
    }
    Ok((out, ok))
}
