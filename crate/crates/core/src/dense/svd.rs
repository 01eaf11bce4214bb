use crate::error::{NdreError, Result};
use crate::lowrank::LowRankFactorPair;
use crate::{Matrix, Vector};

/// Thin SVD with singular values in descending order.
pub fn svd_sorted(y: &Matrix) -> Result<(Matrix, Vector, Matrix)> {
    let (r, c) = y.shape();
    let k = r.min(c);
    if k == 0 {
        return Ok((Matrix::zeros(r, 0), Vector::zeros(0), Matrix::zeros(c, 0)));
    }
    let svd = y
        .clone()
        .try_svd(true, true, f64::EPSILON, 0)
        .ok_or(NdreError::NoConvergence {
            what: "singular value decomposition",
            iterations: 0,
            residual: f64::NAN,
        })?;
    let u = svd.u.expect("u requested");
    let vt = svd.v_t.expect("v requested");
    let sv = svd.singular_values;
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| sv[j].total_cmp(&sv[i]));
    let mut us = Matrix::zeros(r, k);
    let mut vs = Matrix::zeros(c, k);
    let mut ss = Vector::zeros(k);
    for (dst, &src) in order.iter().enumerate() {
        us.set_column(dst, &u.column(src));
        vs.set_column(dst, &vt.row(src).transpose());
        ss[dst] = sv[src];
    }
    Ok((us, ss, vs))
}

/// Factor `Y ~ Z1 Z2^T` keeping singular values above `tol_rel * sigma_1`.
pub fn truncated_svd_factor(y: &Matrix, tol_rel: f64) -> Result<LowRankFactorPair> {
    let (u, s, v) = svd_sorted(y)?;
    let (rows, cols) = y.shape();
    if s.is_empty() || s[0] == 0.0 {
        return Ok(LowRankFactorPair::zeros(rows, cols));
    }
    let cut = tol_rel * s[0];
    let r = s.iter().take_while(|&&x| x > cut).count();
    let mut z1 = u.columns(0, r).into_owned();
    let mut z2 = v.columns(0, r).into_owned();
    for j in 0..r {
        let w = s[j].sqrt();
        z1.column_mut(j).scale_mut(w);
        z2.column_mut(j).scale_mut(w);
    }
    LowRankFactorPair::new(z1, z2)
}
