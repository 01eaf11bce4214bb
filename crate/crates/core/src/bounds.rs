//! A-posteriori error bounds for the projected solution and norm bounds for
//! the matrix exponential.

use nalgebra::SymmetricEigen;
use serde::{Deserialize, Serialize};

use crate::dense::{complex_schur, norm2};
use crate::eba::LowRankSolution;
use crate::error::{NdreError, Result};
use crate::problem::NdreProblem;
use crate::Matrix;

/// Logarithmic 2-norm: largest eigenvalue of the symmetric part.
pub fn log_norm(m: &Matrix) -> Result<f64> {
    if !m.is_square() {
        return Err(NdreError::Dimension(format!(
            "log norm of a {}x{} matrix",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.nrows() == 0 {
        return Ok(f64::NEG_INFINITY);
    }
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    Ok(eig.eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FundamentalBounds {
    /// Bound on the integral of the fundamental solution norms over the horizon.
    pub nu: f64,
    /// Bound on the fundamental solution norm itself.
    pub kappa: f64,
    /// The exponent overflowed; both bounds are infinite.
    pub overflow: bool,
}

/// Bounds from the log norms of the two generators of the linearised error
/// equation `E' = L E + E R`. For the equation `X' = -A X - X D + ...`
/// linearised at `X_m` the generators are `-(A - X_m S)` and `-(D - S X_m)`.
pub fn fundamental_norm_bounds(left: &Matrix, right: &Matrix, t_f: f64) -> Result<FundamentalBounds> {
    Ok(fundamental_from_log_norms(log_norm(left)?, log_norm(right)?, t_f))
}

/// Same as [`fundamental_norm_bounds`] from precomputed log norms.
pub fn fundamental_from_log_norms(lambda: f64, xi: f64, t_f: f64) -> FundamentalBounds {
    let g = lambda.max(0.0) + xi.max(0.0);
    let e = g * t_f;
    if e > 700.0 {
        return FundamentalBounds {
            nu: f64::INFINITY,
            kappa: f64::INFINITY,
            overflow: true,
        };
    }
    let kappa = e.exp();
    // (e^{g t} - 1)/g, with the series near g = 0
    let nu = if e < 1e-8 {
        t_f * (1.0 + 0.5 * e)
    } else {
        e.exp_m1() / g
    };
    FundamentalBounds {
        nu,
        kappa,
        overflow: false,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    pub nu: f64,
    pub kappa: f64,
    pub s_norm: f64,
    /// Largest norm of the projected solution over the horizon.
    pub x_norm: f64,
    pub delta_a: f64,
    pub delta_d: f64,
    /// Norm of the initial error.
    pub e0_norm: f64,
}

impl BoundInputs {
    pub fn a0(&self) -> f64 {
        self.nu * self.s_norm
    }

    pub fn a1(&self) -> f64 {
        self.nu * self.x_norm * (self.delta_a + self.delta_d) + self.kappa * self.e0_norm
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum ErrorBound {
    Feasible { rho: f64, a0: f64, a1: f64 },
    Infeasible { a0a1: f64 },
}

impl ErrorBound {
    pub fn rho(&self) -> Option<f64> {
        match self {
            ErrorBound::Feasible { rho, .. } => Some(*rho),
            ErrorBound::Infeasible { .. } => None,
        }
    }
}

/// `rho = 2 a1 / (1 + sqrt(1 - 4 a0 a1))` when `a0 a1 <= 1/4`.
pub fn nonlocal_error_bound(inputs: &BoundInputs) -> Result<ErrorBound> {
    let vals = [
        inputs.nu,
        inputs.kappa,
        inputs.s_norm,
        inputs.x_norm,
        inputs.delta_a,
        inputs.delta_d,
        inputs.e0_norm,
    ];
    if vals.iter().any(|v| v.is_nan() || *v < 0.0) {
        return Err(NdreError::InvalidParameter(format!(
            "bound inputs must be nonnegative: {inputs:?}"
        )));
    }
    let a0 = inputs.a0();
    let a1 = inputs.a1();
    let prod = a0 * a1;
    // 0 * inf stays feasible only when a1 vanishes
    if a1 == 0.0 {
        return Ok(ErrorBound::Feasible { rho: 0.0, a0, a1 });
    }
    if !prod.is_finite() || prod > 0.25 {
        return Ok(ErrorBound::Infeasible { a0a1: prod });
    }
    let rho = 2.0 * a1 / (1.0 + (1.0 - 4.0 * prod).sqrt());
    Ok(ErrorBound::Feasible { rho, a0, a1 })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExpmBoundMethod {
    PowerSeries,
    LogNorm,
    Schur,
}

/// Parameters of `g(t) = c0 e^{rate t} sum_{k<p} (w t)^k / k!`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpmBoundParams {
    pub c0: f64,
    pub rate: f64,
    pub w: f64,
    pub terms: usize,
}

impl ExpmBoundParams {
    pub fn eval(&self, t: f64) -> f64 {
        let mut sum = 0.0;
        let mut term = 1.0;
        for k in 0..self.terms.max(1) {
            if k > 0 {
                term *= self.w * t / k as f64;
            }
            sum += term;
        }
        self.c0 * (self.rate * t).exp() * sum
    }
}

/// Smallest `k` with `N^k = 0` for a strictly upper triangular pattern,
/// treating entries below `tol` as zero.
fn nilpotency_index(pattern: &[Vec<bool>]) -> usize {
    let n = pattern.len();
    if n == 0 {
        return 1;
    }
    // longest chain i0 < i1 < ... through nonzero entries, plus one
    let mut longest = vec![0usize; n];
    for j in 0..n {
        for i in 0..j {
            if pattern[i][j] {
                longest[j] = longest[j].max(longest[i] + 1);
            }
        }
    }
    longest.iter().copied().max().unwrap_or(0) + 1
}

pub fn expm_bound_params(p: &Matrix, method: ExpmBoundMethod) -> Result<ExpmBoundParams> {
    if !p.is_square() {
        return Err(NdreError::Dimension(format!(
            "exponential bound of a {}x{} matrix",
            p.nrows(),
            p.ncols()
        )));
    }
    match method {
        ExpmBoundMethod::PowerSeries => Ok(ExpmBoundParams {
            c0: 1.0,
            rate: norm2(p),
            w: 0.0,
            terms: 1,
        }),
        ExpmBoundMethod::LogNorm => Ok(ExpmBoundParams {
            c0: 1.0,
            rate: log_norm(p)?,
            w: 0.0,
            terms: 1,
        }),
        ExpmBoundMethod::Schur => {
            let n = p.nrows();
            if n == 0 {
                return Ok(ExpmBoundParams {
                    c0: 1.0,
                    rate: 0.0,
                    w: 0.0,
                    terms: 1,
                });
            }
            let cs = complex_schur(p)?;
            let t = &cs.t;
            let abscissa = (0..n).map(|i| t[(i, i)].re).fold(f64::NEG_INFINITY, f64::max);
            let scale = t.iter().map(|z| z.norm()).fold(0.0, f64::max);
            let tol = 1e-13 * scale.max(f64::MIN_POSITIVE);
            let mut w2 = 0.0;
            let mut pattern = vec![vec![false; n]; n];
            for j in 0..n {
                for i in 0..j {
                    let v = t[(i, j)].norm();
                    w2 += v * v;
                    pattern[i][j] = v > tol;
                }
            }
            let w = w2.sqrt();
            let terms = if w == 0.0 {
                1
            } else {
                nilpotency_index(&pattern).clamp(1, n)
            };
            Ok(ExpmBoundParams {
                c0: 1.0,
                rate: abscissa,
                w,
                terms,
            })
        }
    }
}

/// Upper bound on `|e^{tP}|_2`.
pub fn expm_norm_bound(p: &Matrix, t: f64, method: ExpmBoundMethod) -> Result<f64> {
    if t < 0.0 || !t.is_finite() {
        return Err(NdreError::InvalidParameter(format!(
            "bound time must be finite and nonnegative, got {t}"
        )));
    }
    Ok(expm_bound_params(p, method)?.eval(t))
}

/// Bound inputs for a projection solution at oracle scale. The coefficient
/// generators `-(A - X_m(t) S)`, `-(D - S X_m(t))` and `|X_m(t)|_2` are sampled
/// at the solution's output times, so the horizon is its last output time.
pub fn galerkin_bound_inputs(problem: &NdreProblem, sol: &LowRankSolution, guard: usize) -> Result<BoundInputs> {
    let dense = problem.to_dense(guard)?;
    let t_f = *sol
        .times
        .last()
        .ok_or_else(|| NdreError::InvalidParameter("solution has no output times".into()))?;
    let last = sol
        .report
        .history
        .last()
        .ok_or_else(|| NdreError::InvalidParameter("solution has no residual history".into()))?;
    let (delta_a, delta_d) = match (last.perturbation_a, last.perturbation_d) {
        (Some(a), Some(d)) => (a, d),
        _ => {
            return Err(NdreError::InvalidParameter(
                "residual history lacks perturbation norms".into(),
            ))
        }
    };
    let mut lambda = f64::NEG_INFINITY;
    let mut xi = f64::NEG_INFINITY;
    let mut x_norm: f64 = 0.0;
    let mut x_start = None;
    for (i, &t) in sol.times.iter().enumerate() {
        let x = sol.assemble_dense(i, guard)?;
        lambda = lambda.max(log_norm(&-(&dense.a - &x * &dense.s))?);
        xi = xi.max(log_norm(&-(&dense.d - &dense.s * &x))?);
        x_norm = x_norm.max(norm2(&sol.projected[i]));
        if t == 0.0 {
            x_start = Some(x);
        }
    }
    let x_start = match x_start {
        Some(x) => x,
        None => {
            let v = &sol.basis_a;
            let w = &sol.basis_d;
            v * v.tr_mul(&dense.x0) * w * w.transpose()
        }
    };
    let fb = fundamental_from_log_norms(lambda, xi, t_f);
    Ok(BoundInputs {
        nu: fb.nu,
        kappa: fb.kappa,
        s_norm: norm2(&dense.s),
        x_norm,
        delta_a,
        delta_d,
        e0_norm: norm2(&(&dense.x0 - x_start)),
    })
}
