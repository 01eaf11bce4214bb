use crate::error::{NdreError, Result};

/// Gauss-Legendre rule on `[0, 1]`, nodes in descending order.
#[derive(Debug, Clone)]
pub struct QuadratureRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Golub-Welsch: eigenvalues of the Jacobi matrix are the nodes, squared
/// first eigenvector components give the weights. Only the first row of the
/// eigenvector matrix is tracked through the implicit QL sweeps.
pub fn gauss_legendre_01(n: usize) -> Result<QuadratureRule> {
    if n == 0 {
        return Err(NdreError::InvalidParameter("quadrature order must be positive".into()));
    }
    let mut d = vec![0.0f64; n];
    let mut e = vec![0.0f64; n];
    for k in 1..n {
        let kf = k as f64;
        e[k - 1] = kf / (4.0 * kf * kf - 1.0).sqrt();
    }
    let mut z = vec![0.0f64; n];
    z[0] = 1.0;
    tql_first_row(&mut d, &mut e, &mut z)?;

    let mut pairs: Vec<(f64, f64)> = d
        .iter()
        .zip(z.iter())
        .map(|(&t, &v)| (0.5 * (1.0 + t), v * v))
        .collect();
    let total: f64 = pairs.iter().map(|p| p.1).sum();
    for p in pairs.iter_mut() {
        p.1 /= total;
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    Ok(QuadratureRule {
        nodes: pairs.iter().map(|p| p.0).collect(),
        weights: pairs.iter().map(|p| p.1).collect(),
    })
}

/// Implicit QL on a symmetric tridiagonal matrix (diagonal `d`, off-diagonal
/// `e[i]` between rows i and i+1), rotating the row vector `z` along.
fn tql_first_row(d: &mut [f64], e: &mut [f64], z: &mut [f64]) -> Result<()> {
    let n = d.len();
    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > 60 {
                return Err(NdreError::NoConvergence {
                    what: "tridiagonal QL iteration",
                    iterations: iter,
                    residual: e[l].abs(),
                });
            }
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + r.copysign(g));
            let (mut s, mut c, mut p) = (1.0, 1.0, 0.0);
            let mut underflow = false;
            let mut i = m;
            while i > l {
                i -= 1;
                let f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    underflow = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
                let fz = z[i + 1];
                z[i + 1] = s * z[i] + c * fz;
                z[i] = c * z[i] - s * fz;
            }
            if underflow {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn midpoint_rule() {
        let q = gauss_legendre_01(1).unwrap();
        assert!((q.nodes[0] - 0.5).abs() < 1e-15);
        assert!((q.weights[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn two_point_rule() {
        let q = gauss_legendre_01(2).unwrap();
        let h = 0.5 / 3f64.sqrt();
        assert!((q.nodes[0] - (0.5 + h)).abs() < 1e-15);
        assert!((q.nodes[1] - (0.5 - h)).abs() < 1e-15);
        assert!((q.weights[0] - 0.5).abs() < 1e-15 && (q.weights[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn integrates_polynomials_exactly() {
        let n = 12;
        let q = gauss_legendre_01(n).unwrap();
        for k in 0..(2 * n) {
            let approx: f64 = q.nodes.iter().zip(&q.weights).map(|(x, w)| w * x.powi(k as i32)).sum();
            assert!((approx - 1.0 / (k as f64 + 1.0)).abs() < 1e-14, "degree {k}");
        }
    }

    #[test]
    fn large_order_is_well_formed() {
        let q = gauss_legendre_01(4000).unwrap();
        assert!(q.nodes.windows(2).all(|w| w[0] > w[1]));
        assert!(q.nodes[0] < 1.0 && *q.nodes.last().unwrap() > 0.0);
        assert!(q.weights.iter().all(|&w| w > 0.0));
        assert!((q.weights.iter().sum::<f64>() - 1.0).abs() < 1e-14);
    }
}
