//! Real Schur decomposition by Hessenberg reduction and the Francis
//! double-shift QR iteration, plus conversion to complex Schur form.

use nalgebra::Complex;

use crate::error::{NdreError, Result};
use crate::Matrix;

type CMatrix = nalgebra::DMatrix<Complex<f64>>;

/// `A = Q T Q^T` with `T` upper quasi-triangular. Every 2x2 diagonal block of
/// `T` carries a complex conjugate pair and has equal diagonal entries.
#[derive(Debug, Clone)]
pub struct RealSchur {
    pub q: Matrix,
    pub t: Matrix,
}

impl RealSchur {
    /// Starting row of each diagonal block together with its size (1 or 2).
    pub fn blocks(&self) -> Vec<(usize, usize)> {
        diagonal_blocks(&self.t)
    }

    /// Eigenvalues as (re, im) pairs in diagonal order.
    pub fn eigenvalues(&self) -> Vec<Complex<f64>> {
        let t = &self.t;
        let mut out = Vec::with_capacity(t.nrows());
        for (i, w) in self.blocks() {
            if w == 1 {
                out.push(Complex::new(t[(i, i)], 0.0));
            } else {
                let re = 0.5 * (t[(i, i)] + t[(i + 1, i + 1)]);
                let im = (t[(i, i + 1)].abs().sqrt()) * (t[(i + 1, i)].abs().sqrt());
                out.push(Complex::new(re, im));
                out.push(Complex::new(re, -im));
            }
        }
        out
    }
}

pub(crate) fn diagonal_blocks(t: &Matrix) -> Vec<(usize, usize)> {
    let n = t.nrows();
    let mut out = Vec::new();
    let mut i = 0;
    while i < n {
        if i + 1 < n && t[(i + 1, i)] != 0.0 {
            out.push((i, 2));
            i += 2;
        } else {
            out.push((i, 1));
            i += 1;
        }
    }
    out
}

/// Reduce to upper Hessenberg form, `A = Q H Q^T`.
fn hessenberg(a: &Matrix) -> (Matrix, Matrix) {
    let n = a.nrows();
    let mut h = a.clone();
    let mut q = Matrix::identity(n, n);
    if n < 3 {
        return (h, q);
    }
    let mut v = vec![0.0; n];
    for k in 0..n - 2 {
        let mut alpha = 0.0;
        for i in k + 1..n {
            alpha += h[(i, k)] * h[(i, k)];
        }
        let alpha = alpha.sqrt();
        if alpha == 0.0 {
            continue;
        }
        let x0 = h[(k + 1, k)];
        let beta = if x0 >= 0.0 { -alpha } else { alpha };
        for i in k + 1..n {
            v[i] = h[(i, k)];
        }
        v[k + 1] -= beta;
        let vnorm2: f64 = (k + 1..n).map(|i| v[i] * v[i]).sum();
        if vnorm2 == 0.0 {
            continue;
        }
        let tau = 2.0 / vnorm2;
        // left: rows k+1.., all columns k..
        for j in k..n {
            let mut s = 0.0;
            for i in k + 1..n {
                s += v[i] * h[(i, j)];
            }
            s *= tau;
            for i in k + 1..n {
                h[(i, j)] -= s * v[i];
            }
        }
        // right: all rows, columns k+1..
        for i in 0..n {
            let mut s = 0.0;
            for j in k + 1..n {
                s += h[(i, j)] * v[j];
            }
            s *= tau;
            for j in k + 1..n {
                h[(i, j)] -= s * v[j];
            }
        }
        for i in 0..n {
            let mut s = 0.0;
            for j in k + 1..n {
                s += q[(i, j)] * v[j];
            }
            s *= tau;
            for j in k + 1..n {
                q[(i, j)] -= s * v[j];
            }
        }
        h[(k + 1, k)] = beta;
        for i in k + 2..n {
            h[(i, k)] = 0.0;
        }
    }
    (h, q)
}

/// Apply the 3-element reflector `I - tau v v^T` from the left to rows
/// `r..r+len` on columns `cols`, and from the right to columns `r..r+len` on
/// rows `rows`; also accumulate into `q`.
#[allow(clippy::too_many_arguments)]
fn apply_reflector(
    h: &mut Matrix,
    q: &mut Matrix,
    v: &[f64; 3],
    len: usize,
    tau: f64,
    r: usize,
    col_start: usize,
    row_end: usize,
) {
    let n = h.nrows();
    for j in col_start..n {
        let mut s = 0.0;
        for t in 0..len {
            s += v[t] * h[(r + t, j)];
        }
        s *= tau;
        for t in 0..len {
            h[(r + t, j)] -= s * v[t];
        }
    }
    for i in 0..=row_end {
        let mut s = 0.0;
        for t in 0..len {
            s += h[(i, r + t)] * v[t];
        }
        s *= tau;
        for t in 0..len {
            h[(i, r + t)] -= s * v[t];
        }
    }
    for i in 0..n {
        let mut s = 0.0;
        for t in 0..len {
            s += q[(i, r + t)] * v[t];
        }
        s *= tau;
        for t in 0..len {
            q[(i, r + t)] -= s * v[t];
        }
    }
}

/// Householder vector for `x` (length 2 or 3) with `v[0] = 1`.
fn house(x: &[f64; 3], len: usize) -> Option<([f64; 3], f64)> {
    let mut alpha = 0.0;
    for &xi in x.iter().take(len) {
        alpha += xi * xi;
    }
    let alpha = alpha.sqrt();
    if alpha == 0.0 {
        return None;
    }
    let beta = if x[0] >= 0.0 { -alpha } else { alpha };
    let v0 = x[0] - beta;
    if v0 == 0.0 {
        return None;
    }
    let mut v = [1.0, 0.0, 0.0];
    for t in 1..len {
        v[t] = x[t] / v0;
    }
    let tau = (beta - x[0]) / beta;
    Some((v, tau))
}

/// Standardize a 2x2 block; returns new entries and the rotation (cs, sn)
/// such that `new = [cs sn; -sn cs] old [cs -sn; sn cs]`.
fn lanv2(mut a: f64, mut b: f64, mut c: f64, mut d: f64) -> ([f64; 4], f64, f64) {
    let eps = f64::EPSILON;
    let (mut cs, mut sn);
    if c == 0.0 {
        cs = 1.0;
        sn = 0.0;
    } else if b == 0.0 {
        cs = 0.0;
        sn = 1.0;
        std::mem::swap(&mut a, &mut d);
        b = -c;
        c = 0.0;
    } else if a - d == 0.0 && b.signum() != c.signum() {
        cs = 1.0;
        sn = 0.0;
    } else {
        let temp = a - d;
        let p = 0.5 * temp;
        let bcmax = b.abs().max(c.abs());
        let bcmis = b.abs().min(c.abs()) * b.signum() * c.signum();
        let scale = p.abs().max(bcmax);
        let z = p / scale * p + bcmax / scale * bcmis;
        if z >= 4.0 * eps {
            let z = p + (scale.sqrt() * z.sqrt()).copysign(p);
            a = d + z;
            d -= bcmax / z * bcmis;
            let tau = c.hypot(z);
            cs = z / tau;
            sn = c / tau;
            b -= c;
            c = 0.0;
        } else {
            let sigma = b + c;
            let tau = sigma.hypot(temp);
            cs = (0.5 * (1.0 + sigma.abs() / tau)).sqrt();
            sn = -(p / (tau * cs)) * if sigma >= 0.0 { 1.0 } else { -1.0 };
            let aa = a * cs + b * sn;
            let bb = -a * sn + b * cs;
            let cc = c * cs + d * sn;
            let dd = -c * sn + d * cs;
            a = aa * cs + cc * sn;
            b = bb * cs + dd * sn;
            c = -aa * sn + cc * cs;
            d = -bb * sn + dd * cs;
            let temp = 0.5 * (a + d);
            a = temp;
            d = temp;
            if c != 0.0 {
                if b != 0.0 {
                    if b.signum() == c.signum() {
                        let sab = b.abs().sqrt();
                        let sac = c.abs().sqrt();
                        let p = (sab * sac).copysign(c);
                        let tau = 1.0 / (b + c).abs().sqrt();
                        a = temp + p;
                        d = temp - p;
                        b -= c;
                        c = 0.0;
                        let cs1 = sab * tau;
                        let sn1 = sac * tau;
                        let t2 = cs * cs1 - sn * sn1;
                        sn = cs * sn1 + sn * cs1;
                        cs = t2;
                    }
                } else {
                    b = -c;
                    c = 0.0;
                    let t2 = cs;
                    cs = -sn;
                    sn = t2;
                }
            }
        }
    }
    ([a, b, c, d], cs, sn)
}

fn standardize_block(h: &mut Matrix, q: &mut Matrix, k: usize) {
    let n = h.nrows();
    let (new, cs, sn) = lanv2(h[(k, k)], h[(k, k + 1)], h[(k + 1, k)], h[(k + 1, k + 1)]);
    if cs != 1.0 || sn != 0.0 {
        for j in k + 2..n {
            let x = h[(k, j)];
            let y = h[(k + 1, j)];
            h[(k, j)] = cs * x + sn * y;
            h[(k + 1, j)] = -sn * x + cs * y;
        }
        for i in 0..k {
            let x = h[(i, k)];
            let y = h[(i, k + 1)];
            h[(i, k)] = cs * x + sn * y;
            h[(i, k + 1)] = -sn * x + cs * y;
        }
        for i in 0..n {
            let x = q[(i, k)];
            let y = q[(i, k + 1)];
            q[(i, k)] = cs * x + sn * y;
            q[(i, k + 1)] = -sn * x + cs * y;
        }
    }
    h[(k, k)] = new[0];
    h[(k, k + 1)] = new[1];
    h[(k + 1, k)] = new[2];
    h[(k + 1, k + 1)] = new[3];
}

/// Real Schur decomposition of a square matrix.
pub fn real_schur(a: &Matrix) -> Result<RealSchur> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(NdreError::Dimension(format!(
            "Schur decomposition needs a square matrix, got {}x{}",
            n,
            a.ncols()
        )));
    }
    if a.iter().any(|x| !x.is_finite()) {
        return Err(NdreError::NonFinite("Schur input"));
    }
    let (mut h, mut q) = hessenberg(a);
    if n == 0 {
        return Ok(RealSchur { q, t: h });
    }
    let eps = f64::EPSILON;
    let norm = h.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let small = f64::MIN_POSITIVE / eps;
    let max_iter = 40 * n.max(10);
    let mut hi = n - 1;
    let mut iter = 0usize;
    let mut total = 0usize;
    while hi > 0 {
        // locate the start of the active unreduced block
        let mut l = hi;
        while l > 0 {
            let s = h[(l - 1, l - 1)].abs() + h[(l, l)].abs();
            let s = if s == 0.0 { norm } else { s };
            let sub = h[(l, l - 1)].abs();
            if sub < small {
                h[(l, l - 1)] = 0.0;
                break;
            }
            if sub <= eps * s {
                // Ahues-Tisseur test, guards clustered diagonals
                let sup = h[(l - 1, l)].abs();
                let ab = sub.max(sup);
                let ba = sub.min(sup);
                let dd = (h[(l - 1, l - 1)] - h[(l, l)]).abs();
                let aa = h[(l, l)].abs().max(dd);
                let bb = h[(l, l)].abs().min(dd);
                let s2 = aa + ab;
                if ba * (ab / s2) <= small.max(eps * (bb * (aa / s2))) {
                    h[(l, l - 1)] = 0.0;
                    break;
                }
            }
            l -= 1;
        }
        if l == hi {
            hi -= 1;
            iter = 0;
            continue;
        }
        if l + 1 == hi {
            standardize_block(&mut h, &mut q, l);
            if hi < 2 {
                break;
            }
            hi -= 2;
            iter = 0;
            continue;
        }
        iter += 1;
        total += 1;
        if total > max_iter {
            return Err(NdreError::NoConvergence {
                what: "real Schur QR iteration",
                iterations: total,
                residual: h[(hi, hi - 1)].abs(),
            });
        }
        let (h11, h12, h21, h22) = if iter % 20 == 10 {
            let w = h[(l + 1, l)].abs() + h[(l + 2, l + 1)].abs();
            let a = 0.75 * w + h[(l, l)];
            (a, -0.4375 * w, w, a)
        } else if iter % 20 == 0 {
            let w = h[(hi, hi - 1)].abs() + h[(hi - 1, hi - 2)].abs();
            let a = 0.75 * w + h[(hi, hi)];
            (a, -0.4375 * w, w, a)
        } else {
            (h[(hi - 1, hi - 1)], h[(hi - 1, hi)], h[(hi, hi - 1)], h[(hi, hi)])
        };
        // explicit shifts from the trailing 2x2
        let sc = h11.abs() + h12.abs() + h21.abs() + h22.abs();
        let (rt1r, rt1i, rt2r, rt2i) = if sc == 0.0 {
            (0.0, 0.0, 0.0, 0.0)
        } else {
            let (a, b, c, d) = (h11 / sc, h12 / sc, h21 / sc, h22 / sc);
            let tr = 0.5 * (a + d);
            let det = (a - tr) * (d - tr) - b * c;
            let rtdisc = det.abs().sqrt();
            if det >= 0.0 {
                (tr * sc, rtdisc * sc, tr * sc, -rtdisc * sc)
            } else {
                let r1 = tr + rtdisc;
                let r2 = tr - rtdisc;
                let r = if (r1 - d).abs() <= (r2 - d).abs() { r1 } else { r2 };
                (r * sc, 0.0, r * sc, 0.0)
            }
        };
        let (mut x, mut y, mut z) = {
            let h21s = h[(l + 1, l)];
            let sv = (h[(l, l)] - rt2r).abs() + rt2i.abs() + h21s.abs();
            let h21s = h21s / sv;
            let v1 = h21s * h[(l, l + 1)] + (h[(l, l)] - rt1r) * ((h[(l, l)] - rt2r) / sv) - rt1i * (rt2i / sv);
            let v2 = h21s * (h[(l, l)] + h[(l + 1, l + 1)] - rt1r - rt2r);
            let v3 = h21s * h[(l + 2, l + 1)];
            let sn = v1.abs() + v2.abs() + v3.abs();
            (v1 / sn, v2 / sn, v3 / sn)
        };
        for k in l..hi - 1 {
            if let Some((v, tau)) = house(&[x, y, z], 3) {
                let col_start = if k > l { k - 1 } else { l };
                let row_end = (k + 3).min(hi);
                apply_reflector(&mut h, &mut q, &v, 3, tau, k, col_start, row_end);
                if k > l {
                    h[(k + 1, k - 1)] = 0.0;
                    h[(k + 2, k - 1)] = 0.0;
                }
            }
            x = h[(k + 1, k)];
            y = h[(k + 2, k)];
            if k + 3 <= hi {
                z = h[(k + 3, k)];
            }
        }
        if let Some((v, tau)) = house(&[x, y, 0.0], 2) {
            let k = hi - 1;
            apply_reflector(&mut h, &mut q, &v, 2, tau, k, k - 1, hi);
            h[(hi, hi - 2)] = 0.0;
        }
    }
    // clean everything below the quasi-diagonal
    for j in 0..n {
        for i in j + 2..n {
            h[(i, j)] = 0.0;
        }
    }
    Ok(RealSchur { q, t: h })
}

/// Complex Schur form `A = U T U^H` with `T` upper triangular.
#[derive(Debug, Clone)]
pub struct ComplexSchur {
    pub u: CMatrix,
    pub t: CMatrix,
}

/// Convert a real Schur form to complex upper-triangular form by unitary
/// rotations of each 2x2 block.
pub fn complex_schur(a: &Matrix) -> Result<ComplexSchur> {
    let rs = real_schur(a)?;
    let n = a.nrows();
    let mut t: CMatrix = rs.t.map(|x| Complex::new(x, 0.0));
    let mut u: CMatrix = rs.q.map(|x| Complex::new(x, 0.0));
    let mut m = n;
    while m >= 2 {
        let i = m - 1;
        if t[(i, i - 1)] != Complex::new(0.0, 0.0) {
            let a11 = t[(i - 1, i - 1)];
            let a12 = t[(i - 1, i)];
            let a21 = t[(i, i - 1)];
            let a22 = t[(i, i)];
            let tr = a11 + a22;
            let det = a11 * a22 - a12 * a21;
            let disc = (tr * tr * 0.25 - det).sqrt();
            let lam = tr * 0.5 + disc;
            let mu = lam - a22;
            let r = (mu.norm_sqr() + a21.norm_sqr()).sqrt();
            let c = mu / r;
            let s = a21 / r;
            // G = [c^* s; -s c]
            for j in i - 1..n {
                let x = t[(i - 1, j)];
                let y = t[(i, j)];
                t[(i - 1, j)] = c.conj() * x + s * y;
                t[(i, j)] = -s * x + c * y;
            }
            for r_ in 0..=i {
                let x = t[(r_, i - 1)];
                let y = t[(r_, i)];
                t[(r_, i - 1)] = x * c + y * s.conj();
                t[(r_, i)] = -x * s.conj() + y * c.conj();
            }
            for r_ in 0..n {
                let x = u[(r_, i - 1)];
                let y = u[(r_, i)];
                u[(r_, i - 1)] = x * c + y * s.conj();
                u[(r_, i)] = -x * s.conj() + y * c.conj();
            }
            t[(i, i - 1)] = Complex::new(0.0, 0.0);
        }
        m -= 1;
    }
    Ok(ComplexSchur { u, t })
}
