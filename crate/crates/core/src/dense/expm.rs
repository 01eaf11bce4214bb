//! Matrix exponential by scaling and squaring with diagonal Pade approximants.

use super::{ensure_finite, norm1};
use crate::error::{NdreError, Result};
use crate::Matrix;

const THETA: [(usize, f64); 4] = [
    (3, 1.495585217958292e-2),
    (5, 2.539398330063230e-1),
    (7, 9.504178996162932e-1),
    (9, 2.097847961257068e0),
];
const THETA_13: f64 = 5.371920351148152e0;

fn pade_coefficients(deg: usize) -> &'static [f64] {
    match deg {
        3 => &[120.0, 60.0, 12.0, 1.0],
        5 => &[30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0],
        7 => &[17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0],
        9 => &[
            17643225600.0,
            8821612800.0,
            2075673600.0,
            302702400.0,
            30270240.0,
            2162160.0,
            110880.0,
            3960.0,
            90.0,
            1.0,
        ],
        _ => &[
            64764752532480000.0,
            32382376266240000.0,
            7771770303897600.0,
            1187353796428800.0,
            129060195264000.0,
            10559470521600.0,
            670442572800.0,
            33522128640.0,
            1323241920.0,
            40840800.0,
            960960.0,
            16380.0,
            182.0,
            1.0,
        ],
    }
}

fn pade(a: &Matrix, deg: usize) -> Result<Matrix> {
    let n = a.nrows();
    let b = pade_coefficients(deg);
    let id = Matrix::identity(n, n);
    let a2 = a * a;
    let (u, v) = if deg == 13 {
        let a4 = &a2 * &a2;
        let a6 = &a4 * &a2;
        let inner_u = &a6 * (&a6 * b[13] + &a4 * b[11] + &a2 * b[9]);
        let u = a * (inner_u + &a6 * b[7] + &a4 * b[5] + &a2 * b[3] + &id * b[1]);
        let inner_v = &a6 * (&a6 * b[12] + &a4 * b[10] + &a2 * b[8]);
        let v = inner_v + &a6 * b[6] + &a4 * b[4] + &a2 * b[2] + &id * b[0];
        (u, v)
    } else {
        let mut pow = id.clone();
        let mut u = &id * b[1];
        let mut v = &id * b[0];
        for k in 1..=deg / 2 {
            pow = &pow * &a2;
            u += &pow * b[2 * k + 1];
            v += &pow * b[2 * k];
        }
        (a * u, v)
    };
    let den = &v - &u;
    let num = v + u;
    den.lu()
        .solve(&num)
        .ok_or_else(|| NdreError::Singular("Pade denominator".into()))
}

/// `e^M` for a square dense matrix.
pub fn matrix_exponential(m: &Matrix) -> Result<Matrix> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(NdreError::Dimension(format!(
            "matrix exponential of a {}x{} matrix",
            n,
            m.ncols()
        )));
    }
    ensure_finite(m, "matrix exponential input")?;
    let nrm = norm1(m);
    if nrm == 0.0 {
        return Ok(Matrix::identity(n, n));
    }
    for &(deg, theta) in THETA.iter() {
        if nrm <= theta {
            return pade(m, deg);
        }
    }
    let s = (nrm / THETA_13).log2().ceil().max(0.0) as i32;
    if s > 1000 {
        return Err(NdreError::ExpOverflow { norm: nrm });
    }
    let scaled = m * 2f64.powi(-s);
    let mut r = pade(&scaled, 13)?;
    for _ in 0..s {
        r = &r * &r;
        if r.iter().any(|x| !x.is_finite()) {
            return Err(NdreError::ExpOverflow { norm: nrm });
        }
    }
    if r.iter().any(|x| !x.is_finite()) {
        return Err(NdreError::ExpOverflow { norm: nrm });
    }
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_and_diagonal() {
        assert_eq!(
            matrix_exponential(&Matrix::zeros(3, 3)).unwrap(),
            Matrix::identity(3, 3)
        );
        let e = matrix_exponential(&Matrix::from_diagonal(&nalgebra::dvector![1.0, -1.0])).unwrap();
        assert!((e[(0, 0)] - std::f64::consts::E).abs() < 1e-15 * 3.0);
        assert!((e[(1, 1)] - 1.0 / std::f64::consts::E).abs() < 1e-16 * 3.0);
        assert_eq!(e[(0, 1)], 0.0);
    }

    #[test]
    fn nilpotent_block() {
        let e = matrix_exponential(&Matrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0])).unwrap();
        assert!((e - Matrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0])).norm() < 1e-15);
    }

    #[test]
    fn inverse_pair() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for k in [2usize, 10, 50] {
            let mut m = Matrix::from_fn(k, k, |_, _| rng.random_range(-1.0..1.0));
            let scale = 5.0 / m.norm();
            m *= scale;
            let p = matrix_exponential(&m).unwrap() * matrix_exponential(&(-&m)).unwrap();
            assert!((p - Matrix::identity(k, k)).norm() < 1e-10);
        }
    }

    #[test]
    fn rotation_generator() {
        let t = 2.5f64;
        let e = matrix_exponential(&Matrix::from_row_slice(2, 2, &[0.0, -t, t, 0.0])).unwrap();
        assert!((e[(0, 0)] - t.cos()).abs() < 1e-14);
        assert!((e[(1, 0)] - t.sin()).abs() < 1e-14);
    }

    #[test]
    fn huge_norm_overflows() {
        let m = Matrix::from_diagonal(&nalgebra::dvector![5000.0, 1.0]);
        assert!(matches!(matrix_exponential(&m), Err(NdreError::ExpOverflow { .. })));
    }
}
