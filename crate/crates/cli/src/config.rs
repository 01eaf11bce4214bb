//! Run configuration: a TOML file with `[problem]`, `[solver]` and `[output]`
//! sections, overridden field by field from the command line.

use std::path::{Path, PathBuf};

use clap::ValueEnum;
use ndre_core::eba::SolverOptions;
use ndre_core::io::ProblemFiles;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ProblemKind {
    Transport,
    Guo,
    File,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    EbaExp,
    EbaBdf1,
    EbaBdf2,
    EbaBdf3,
    EbaRosenbrock,
    /// Full-scale BDF1 + Newton, block Arnoldi inner solves.
    Bdf1NewtonBa,
    /// Full-scale BDF1 + Newton, extended block Arnoldi inner solves.
    Bdf1NewtonEba,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::EbaExp => "eba-exp",
            Method::EbaBdf1 => "eba-bdf1",
            Method::EbaBdf2 => "eba-bdf2",
            Method::EbaBdf3 => "eba-bdf3",
            Method::EbaRosenbrock => "eba-rosenbrock",
            Method::Bdf1NewtonBa => "bdf1-newton-ba",
            Method::Bdf1NewtonEba => "bdf1-newton-eba",
        }
    }

    pub fn is_projection(&self) -> bool {
        !matches!(self, Method::Bdf1NewtonBa | Method::Bdf1NewtonEba)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum, Default)]
#[serde(rename_all = "kebab-case")]
pub enum OracleKind {
    #[default]
    None,
    DirectExp,
    DenseBdf,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    pub kind: Option<ProblemKind>,
    pub n: Option<usize>,
    pub c: Option<f64>,
    pub alpha: Option<f64>,
    pub seed: Option<u64>,
    pub files: Option<ProblemFiles>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    pub method: Option<Method>,
    pub methods: Option<Vec<Method>>,
    pub h: Option<f64>,
    pub tf: Option<f64>,
    pub tol: Option<f64>,
    pub check_every: Option<usize>,
    pub m_max: Option<usize>,
    /// Spacing of the output grid; only the final time when absent.
    pub output_step: Option<f64>,
    pub trunc_tol: Option<f64>,
    pub cond_limit: Option<f64>,
    pub block_arnoldi: Option<bool>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: Option<PathBuf>,
    pub oracle: Option<OracleKind>,
    pub bounds: Option<bool>,
    pub factors: Option<bool>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default)]
    pub problem: ProblemSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

impl ConfigFile {
    pub fn parse(text: &str, origin: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError(format!("{origin}: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        Self::parse(&text, &path.display().to_string())
    }
}

/// Fully resolved settings of one run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSpec {
    pub problem: ProblemKind,
    pub n: usize,
    pub c: f64,
    pub alpha: f64,
    pub seed: u64,
    pub files: Option<ProblemFiles>,
    /// Directory that relative problem file paths resolve against.
    pub base_dir: PathBuf,
    pub methods: Vec<Method>,
    pub h: f64,
    pub t_f: f64,
    pub tol: f64,
    pub check_every: usize,
    pub m_max: usize,
    pub output_step: Option<f64>,
    pub trunc_tol: f64,
    pub cond_limit: f64,
    pub block_arnoldi: bool,
    pub out: PathBuf,
    pub oracle: OracleKind,
    pub bounds: bool,
    pub factors: bool,
}

impl RunSpec {
    /// Output times: `k * output_step` up to `t_f`, always ending at `t_f`.
    pub fn output_times(&self) -> Vec<f64> {
        match self.output_step {
            None => vec![self.t_f],
            Some(step) => {
                let k = (self.t_f / step).round() as usize;
                let mut t: Vec<f64> = (1..=k).map(|i| i as f64 * step).filter(|&t| t < self.t_f).collect();
                t.insert(0, 0.0);
                t.push(self.t_f);
                t
            }
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |m: String| Err(ConfigError(m));
        if self.methods.is_empty() {
            return fail("solver.method: no method configured".into());
        }
        if !(self.h > 0.0) {
            return fail(format!("solver.h: must be positive, got {}", self.h));
        }
        if !(self.t_f > 0.0) {
            return fail(format!("solver.tf: must be positive, got {}", self.t_f));
        }
        if !(self.tol > 0.0) {
            return fail(format!("solver.tol: must be positive, got {}", self.tol));
        }
        if self.check_every == 0 || self.m_max == 0 {
            return fail("solver.check_every and solver.m_max must be positive".into());
        }
        if let Some(s) = self.output_step {
            if !(s > 0.0) || s > self.t_f {
                return fail(format!("solver.output_step: must lie in (0, tf], got {s}"));
            }
        }
        if self.problem == ProblemKind::File && self.files.is_none() {
            return fail("problem.files: required for problem kind 'file'".into());
        }
        if self.n == 0 {
            return fail("problem.n: must be positive".into());
        }
        Ok(())
    }
}

/// Command-line values that override the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub problem: Option<ProblemKind>,
    pub n: Option<usize>,
    pub c: Option<f64>,
    pub alpha: Option<f64>,
    pub seed: Option<u64>,
    pub methods: Option<Vec<Method>>,
    pub h: Option<f64>,
    pub t_f: Option<f64>,
    pub tol: Option<f64>,
    pub check_every: Option<usize>,
    pub m_max: Option<usize>,
    pub output_step: Option<f64>,
    pub out: Option<PathBuf>,
    pub oracle: Option<OracleKind>,
    pub bounds: bool,
    pub no_factors: bool,
}

pub fn resolve(file: &ConfigFile, base_dir: &Path, o: &Overrides) -> Result<RunSpec, ConfigError> {
    let p = &file.problem;
    let s = &file.solver;
    let out = &file.output;
    let methods = match (&o.methods, &s.methods, s.method) {
        (Some(m), _, _) => m.clone(),
        (None, Some(m), _) => m.clone(),
        (None, None, Some(m)) => vec![m],
        (None, None, None) => vec![Method::EbaBdf1],
    };
    let spec = RunSpec {
        problem: o.problem.or(p.kind).unwrap_or(ProblemKind::Transport),
        n: o.n.or(p.n).unwrap_or(40),
        c: o.c.or(p.c).unwrap_or(0.5),
        alpha: o.alpha.or(p.alpha).unwrap_or(0.5),
        seed: o.seed.or(p.seed).unwrap_or(1),
        files: p.files.clone(),
        base_dir: base_dir.to_path_buf(),
        methods,
        h: o.h.or(s.h).unwrap_or(0.01),
        t_f: o.t_f.or(s.tf).unwrap_or(1.0),
        tol: o.tol.or(s.tol).unwrap_or(1e-10),
        check_every: o.check_every.or(s.check_every).unwrap_or(5),
        m_max: o.m_max.or(s.m_max).unwrap_or(100),
        output_step: o.output_step.or(s.output_step),
        trunc_tol: s.trunc_tol.unwrap_or(1e-12),
        cond_limit: s.cond_limit.unwrap_or(SolverOptions::default().cond_limit),
        block_arnoldi: s.block_arnoldi.unwrap_or(false),
        out: o
            .out
            .clone()
            .or(out.dir.clone())
            .unwrap_or_else(|| PathBuf::from("ndre-out")),
        oracle: o.oracle.or(out.oracle).unwrap_or_default(),
        bounds: o.bounds || out.bounds.unwrap_or(false),
        factors: !o.no_factors && out.factors.unwrap_or(true),
    };
    spec.validate()?;
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_values_and_overrides() {
        let f = ConfigFile::parse(
            "[problem]\nkind = \"guo\"\nn = 12\n[solver]\nmethod = \"eba-exp\"\ntf = 2.0\n[output]\noracle = \"direct-exp\"\n",
            "test",
        )
        .unwrap();
        let spec = resolve(&f, Path::new("."), &Overrides::default()).unwrap();
        assert_eq!((spec.problem, spec.n, spec.t_f), (ProblemKind::Guo, 12, 2.0));
        assert_eq!(spec.methods, vec![Method::EbaExp]);
        assert_eq!(spec.oracle, OracleKind::DirectExp);
        let o = Overrides {
            n: Some(30),
            methods: Some(vec![Method::EbaBdf2]),
            ..Overrides::default()
        };
        let spec = resolve(&f, Path::new("."), &o).unwrap();
        assert_eq!(spec.n, 30);
        assert_eq!(spec.methods, vec![Method::EbaBdf2]);
    }

    #[test]
    fn diagnostics_name_the_field() {
        let err = ConfigFile::parse("[solver]\nh = \"fast\"\n", "cfg.toml").unwrap_err();
        assert!(err.0.contains("cfg.toml") && err.0.contains("line 2"), "{}", err.0);
        let err = ConfigFile::parse("[solver]\nstep = 1\n", "cfg.toml").unwrap_err();
        assert!(err.0.contains("step"), "{}", err.0);
        let f = ConfigFile::parse("[solver]\nh = -1.0\n", "cfg.toml").unwrap();
        let err = resolve(&f, Path::new("."), &Overrides::default()).unwrap_err();
        assert!(err.0.starts_with("solver.h"), "{}", err.0);
    }

    #[test]
    fn output_grid() {
        let f = ConfigFile::default();
        let o = Overrides {
            t_f: Some(1.0),
            output_step: Some(0.25),
            ..Overrides::default()
        };
        let spec = resolve(&f, Path::new("."), &o).unwrap();
        assert_eq!(spec.output_times(), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
    }
}
