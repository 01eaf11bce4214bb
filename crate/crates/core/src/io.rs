//! Matrix Market and plain-text matrix input/output, and problems assembled
//! from files.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra_sparse::io::{load_coo_from_matrix_market_file, load_coo_from_matrix_market_str};
use nalgebra_sparse::CooMatrix;

use crate::error::{NdreError, Result};
use crate::lowrank::LowRankFactorPair;
use crate::problem::{CouplingMatrix, LinearOperator, NdreProblem, Operator, SparseOperator};
use crate::Matrix;

fn mm_err(path: &str, e: impl std::fmt::Display) -> NdreError {
    NdreError::Parse(format!("{path}: {e}"))
}

fn coo_to_dense(coo: &CooMatrix<f64>) -> Matrix {
    let mut m = Matrix::zeros(coo.nrows(), coo.ncols());
    for (i, j, v) in coo.triplet_iter() {
        m[(i, j)] += *v;
    }
    m
}

/// Dense matrix from a Matrix Market file (array or coordinate).
pub fn read_matrix_market_dense(path: &Path) -> Result<Matrix> {
    let coo = load_coo_from_matrix_market_file::<f64, _>(path).map_err(|e| mm_err(&path.display().to_string(), e))?;
    Ok(coo_to_dense(&coo))
}

pub fn parse_matrix_market_dense(data: &str) -> Result<Matrix> {
    let coo = load_coo_from_matrix_market_str::<f64>(data).map_err(|e| mm_err("<string>", e))?;
    Ok(coo_to_dense(&coo))
}

/// Square sparse operator from a Matrix Market file.
pub fn read_matrix_market_operator(path: &Path) -> Result<SparseOperator> {
    let coo = load_coo_from_matrix_market_file::<f64, _>(path).map_err(|e| mm_err(&path.display().to_string(), e))?;
    coo_to_operator(&coo)
}

fn coo_to_operator(coo: &CooMatrix<f64>) -> Result<SparseOperator> {
    if coo.nrows() != coo.ncols() {
        return Err(NdreError::Dimension(format!(
            "operator matrix must be square, got {}x{}",
            coo.nrows(),
            coo.ncols()
        )));
    }
    let triplets: Vec<(usize, usize, f64)> = coo.triplet_iter().map(|(i, j, v)| (i, j, *v)).collect();
    SparseOperator::from_triplets(coo.nrows(), &triplets)
}

/// Matrix Market `array real general` text (column-major values).
pub fn matrix_market_array_string(m: &Matrix) -> String {
    let mut s = String::from("%%MatrixMarket matrix array real general\n");
    let _ = writeln!(s, "{} {}", m.nrows(), m.ncols());
    for v in m.iter() {
        let _ = writeln!(s, "{v:e}");
    }
    s
}

pub fn write_matrix_market_array(path: &Path, m: &Matrix) -> Result<()> {
    fs::write(path, matrix_market_array_string(m))?;
    Ok(())
}

/// Matrix Market `coordinate real general` text.
pub fn matrix_market_coordinate_string(op: &SparseOperator) -> String {
    let t = op.triplets();
    let n = op.dim();
    let mut s = String::from("%%MatrixMarket matrix coordinate real general\n");
    let _ = writeln!(s, "{n} {n} {}", t.len());
    for (i, j, v) in t {
        let _ = writeln!(s, "{} {} {v:e}", i + 1, j + 1);
    }
    s
}

pub fn write_matrix_market_coordinate(path: &Path, op: &SparseOperator) -> Result<()> {
    fs::write(path, matrix_market_coordinate_string(op))?;
    Ok(())
}

/// Whitespace-separated rows; blank lines and `#` comments are skipped.
pub fn parse_dense_text(data: &str) -> Result<Matrix> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (ln, line) in data.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let row = line
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|t| !t.is_empty())
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|e| NdreError::Parse(format!("line {}: '{t}': {e}", ln + 1)))
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(NdreError::Parse(format!(
                    "line {}: {} values, expected {}",
                    ln + 1,
                    row.len(),
                    first.len()
                )));
            }
        }
        rows.push(row);
    }
    let r = rows.len();
    let c = rows.first().map_or(0, |x| x.len());
    Ok(Matrix::from_fn(r, c, |i, j| rows[i][j]))
}

pub fn read_dense_text(path: &Path) -> Result<Matrix> {
    let data = fs::read_to_string(path)?;
    parse_dense_text(&data).map_err(|e| match e {
        NdreError::Parse(m) => NdreError::Parse(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn dense_text_string(m: &Matrix) -> String {
    let mut s = String::new();
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| format!("{:e}", m[(i, j)])).collect();
        s.push_str(&row.join(" "));
        s.push('\n');
    }
    s
}

pub fn write_dense_text(path: &Path, m: &Matrix) -> Result<()> {
    fs::write(path, dense_text_string(m))?;
    Ok(())
}

/// Reads a dense matrix by extension: `.mtx` is Matrix Market, anything
/// else plain text.
pub fn read_matrix_auto(path: &Path) -> Result<Matrix> {
    if path.extension().is_some_and(|e| e == "mtx") {
        read_matrix_market_dense(path)
    } else {
        read_dense_text(path)
    }
}

/// File locations for a general problem.
#[derive(Debug, Clone, Default, serde::Serialize, serde::Deserialize)]
pub struct ProblemFiles {
    pub a: String,
    pub d: String,
    pub s: String,
    pub f: String,
    pub g: String,
    #[serde(default)]
    pub z01: Option<String>,
    #[serde(default)]
    pub z02: Option<String>,
}

/// `A`, `D` from Matrix Market (kept sparse), `S`, `F`, `G`, `Z01`, `Z02`
/// dense from text or Matrix Market. Relative paths resolve against `base`.
pub fn load_problem(files: &ProblemFiles, base: &Path) -> Result<NdreProblem> {
    let p = |s: &str| base.join(s);
    let a = read_matrix_market_operator(&p(&files.a))?;
    let d = read_matrix_market_operator(&p(&files.d))?;
    let s = read_matrix_auto(&p(&files.s))?;
    let f = read_matrix_auto(&p(&files.f))?;
    let g = read_matrix_auto(&p(&files.g))?;
    let (n, pp) = (a.dim(), d.dim());
    let x0 = match (&files.z01, &files.z02) {
        (Some(z1), Some(z2)) => LowRankFactorPair::new(read_matrix_auto(&p(z1))?, read_matrix_auto(&p(z2))?)?,
        (None, None) => LowRankFactorPair::zeros(n, pp),
        _ => {
            return Err(NdreError::InvalidParameter(
                "initial value needs both z01 and z02 factor files".into(),
            ))
        }
    };
    let label = format!("file({})", files.a);
    Ok(NdreProblem::new(
        Operator::Sparse(a),
        Operator::Sparse(d),
        CouplingMatrix::Dense(s),
        f,
        g,
        x0,
    )?
    .with_label(label))
}

/// Writes `Z1`, `Z2` of each factor pair as `z1_<i>.mtx`, `z2_<i>.mtx`.
pub fn write_factors(dir: &Path, factors: &[LowRankFactorPair]) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (i, f) in factors.iter().enumerate() {
        write_matrix_market_array(&dir.join(format!("z1_{i:04}.mtx")), &f.z1)?;
        write_matrix_market_array(&dir.join(format!("z2_{i:04}.mtx")), &f.z2)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn array_roundtrip() {
        let m = Matrix::from_row_slice(2, 3, &[1.0, -2.5, 3.0, 4e-17, 5.0, 6.0]);
        let back = parse_matrix_market_dense(&matrix_market_array_string(&m)).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn coordinate_roundtrip() {
        let op = SparseOperator::from_triplets(3, &[(0, 0, 2.0), (0, 1, -1.0), (2, 0, -1.0), (1, 1, 2.0), (2, 2, 2.0)])
            .unwrap();
        let s = matrix_market_coordinate_string(&op);
        let coo = load_coo_from_matrix_market_str::<f64>(&s).unwrap();
        let back = coo_to_operator(&coo).unwrap();
        assert_eq!(back.to_dense(), op.to_dense());
    }

    #[test]
    fn dense_text_parsing() {
        let m = parse_dense_text("# header\n1 2\n3, 4 # trailing\n\n").unwrap();
        assert_eq!(m, Matrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]));
        assert!(parse_dense_text("1 2\n3\n").is_err());
        assert!(parse_dense_text("1 x\n").is_err());
        let r = Matrix::from_row_slice(1, 2, &[0.1, 1e300]);
        assert_eq!(parse_dense_text(&dense_text_string(&r)).unwrap(), r);
    }

    #[test]
    fn problem_from_files() {
        let dir = std::env::temp_dir().join(format!("ndre-io-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let a = SparseOperator::from_triplets(3, &[(0, 0, 2.0), (1, 1, 3.0), (2, 2, 4.0), (0, 2, -1.0)]).unwrap();
        write_matrix_market_coordinate(&dir.join("a.mtx"), &a).unwrap();
        write_matrix_market_coordinate(&dir.join("d.mtx"), &a).unwrap();
        write_dense_text(&dir.join("s.txt"), &Matrix::identity(3, 3)).unwrap();
        write_dense_text(&dir.join("f.txt"), &Matrix::from_element(3, 1, 1.0)).unwrap();
        write_matrix_market_array(&dir.join("g.mtx"), &Matrix::from_element(3, 1, 0.5)).unwrap();
        let files = ProblemFiles {
            a: "a.mtx".into(),
            d: "d.mtx".into(),
            s: "s.txt".into(),
            f: "f.txt".into(),
            g: "g.mtx".into(),
            z01: None,
            z02: None,
        };
        let p = load_problem(&files, &dir).unwrap();
        assert_eq!((p.n(), p.p(), p.s_rank()), (3, 3, 1));
        assert_eq!(p.a.to_dense(), a.to_dense());
        assert_eq!(p.g, Matrix::from_element(3, 1, 0.5));
        fs::remove_dir_all(&dir).unwrap();
    }
}
