//! Serializable solve reports.

use serde::{Deserialize, Serialize};

use crate::krylov::{DeflationEvent, KrylovKind};
use crate::projected::IntegratorStats;
use crate::Matrix;

/// Row-major dense array for JSON output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseArray {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl From<&Matrix> for DenseArray {
    fn from(m: &Matrix) -> Self {
        let mut data = Vec::with_capacity(m.len());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                data.push(m[(i, j)]);
            }
        }
        DenseArray {
            rows: m.nrows(),
            cols: m.ncols(),
            data,
        }
    }
}

impl DenseArray {
    pub fn to_matrix(&self) -> Matrix {
        Matrix::from_row_slice(self.rows, self.cols, &self.data)
    }
}

/// Data needed to recompute a residual value offline: the subdiagonal
/// blocks of both bases and the matching slices of the projected solution.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpotCheck {
    pub t_next_a: DenseArray,
    pub t_next_d: DenseArray,
    /// Last block rows of `Y` (`E_m^T Y`).
    pub y_last_rows: DenseArray,
    /// Last block columns of `Y` (`Y E_m`).
    pub y_last_cols: DenseArray,
}

impl SpotCheck {
    /// Frobenius residual `sqrt(|T_A E^T Y|^2 + |Y E T_D^T|^2)`.
    pub fn recompute(&self) -> f64 {
        let a = self.t_next_a.to_matrix() * self.y_last_rows.to_matrix();
        let d = self.y_last_cols.to_matrix() * self.t_next_d.to_matrix().transpose();
        (a.norm_squared() + d.norm_squared()).sqrt()
    }
}

/// JSON has no NaN; serde_json writes it as `null`, read it back as NaN.
fn nan_from_null<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResidualRecord {
    /// Krylov step (projection methods) or time step (BDF-Newton).
    pub m_or_step: usize,
    pub time: f64,
    pub residual: f64,
    pub residual_rel: f64,
    /// NaN when not computed (BDF-Newton).
    #[serde(deserialize_with = "nan_from_null")]
    pub residual_2norm: f64,
    pub rank: usize,
    pub wall_seconds: f64,
    pub dim_a: usize,
    pub dim_d: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub perturbation_a: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub perturbation_d: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub newton_iterations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub spot: Option<SpotCheck>,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct SideReport {
    pub kind: Option<KrylovKind>,
    pub dim: usize,
    pub breakdown: bool,
    pub deflations: Vec<DeflationEvent>,
    pub fallback: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveReport {
    pub method: String,
    pub problem: String,
    pub n: usize,
    pub p: usize,
    pub s: usize,
    pub seed: Option<u64>,
    pub converged: bool,
    pub steps: usize,
    #[serde(deserialize_with = "nan_from_null")]
    pub final_residual: f64,
    #[serde(deserialize_with = "nan_from_null")]
    pub final_residual_rel: f64,
    pub side_a: SideReport,
    pub side_d: SideReport,
    pub history: Vec<ResidualRecord>,
    pub output_times: Vec<f64>,
    pub ranks: Vec<usize>,
    pub integrator: IntegratorStats,
    pub wall_seconds: f64,
    pub notes: Vec<String>,
}

impl SolveReport {
    pub fn new(method: impl Into<String>, problem: impl Into<String>, n: usize, p: usize, s: usize) -> Self {
        SolveReport {
            method: method.into(),
            problem: problem.into(),
            n,
            p,
            s,
            seed: None,
            converged: false,
            steps: 0,
            final_residual: f64::NAN,
            final_residual_rel: f64::NAN,
            side_a: SideReport::default(),
            side_d: SideReport::default(),
            history: Vec::new(),
            output_times: Vec::new(),
            ranks: Vec::new(),
            integrator: IntegratorStats::default(),
            wall_seconds: 0.0,
            notes: Vec::new(),
        }
    }
}
