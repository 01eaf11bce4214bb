use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ndre_cli::{check, compare, config, run, CliError, ConfigFile, Method, OracleKind, Overrides, ProblemKind};

#[derive(Parser)]
#[command(
    name = "ndre",
    version,
    about = "Large-scale nonsymmetric differential Riccati experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve with the configured method(s) and write report, residuals and factors.
    Run(RunArgs),
    /// Solve with two or more methods and tabulate final-time differences.
    Compare(RunArgs),
    /// Recompute stored residuals of a finished run from its spot-check data.
    Check {
        dir: PathBuf,
        #[arg(long, default_value_t = 1e-10)]
        tol: f64,
    },
}

#[derive(Args)]
struct RunArgs {
    /// TOML file with [problem], [solver] and [output] sections.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    problem: Option<ProblemKind>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    c: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Repeat or comma-separate to give several.
    #[arg(long, value_enum, value_delimiter = ',')]
    method: Vec<Method>,
    #[arg(long)]
    h: Option<f64>,
    #[arg(long)]
    tf: Option<f64>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    check_every: Option<usize>,
    #[arg(long)]
    m_max: Option<usize>,
    /// Spacing of the output grid (default: final time only).
    #[arg(long)]
    output_step: Option<f64>,
    #[arg(long, value_enum)]
    oracle: Option<OracleKind>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Evaluate the a posteriori error bound (projection methods, small n).
    #[arg(long)]
    bounds: bool,
    /// Skip writing factor files.
    #[arg(long)]
    no_factors: bool,
}

fn resolve(a: RunArgs) -> Result<ndre_cli::RunSpec, CliError> {
    let (file, base) = match &a.config {
        Some(p) => (
            ConfigFile::load(p)?,
            p.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf),
        ),
        None => (ConfigFile::default(), PathBuf::from(".")),
    };
    let o = Overrides {
        problem: a.problem,
        n: a.n,
        c: a.c,
        alpha: a.alpha,
        seed: a.seed,
        methods: (!a.method.is_empty()).then_some(a.method),
        h: a.h,
        t_f: a.tf,
        tol: a.tol,
        check_every: a.check_every,
        m_max: a.m_max,
        output_step: a.output_step,
        out: a.out,
        oracle: a.oracle,
        bounds: a.bounds,
        no_factors: a.no_factors,
    };
    Ok(config::resolve(&file, &base, &o)?)
}

fn execute(cli: Cli) -> Result<i32, CliError> {
    match cli.command {
        Command::Run(a) => {
            let spec = resolve(a)?;
            let out = run(&spec)?;
            for r in &out.report.runs {
                let rank = r.report.as_ref().and_then(|x| x.ranks.last().copied()).unwrap_or(0);
                println!(
                    "{:<18} converged={} residual_rel={:.3e} rank={} seconds={:.2}",
                    r.method.name(),
                    r.converged,
                    r.final_residual_rel.unwrap_or(f64::NAN),
                    rank,
                    r.wall_seconds
                );
                if let Some(o) = &r.oracle {
                    println!(
                        "{:<18} oracle max|dX11|={:.3e} max|dX|={:.3e} rel_fro={:.3e}",
                        "", o.max_abs_diff_x11, o.max_abs_diff, o.max_rel_fro_diff
                    );
                }
                if let Some(b) = &r.bounds {
                    match b.rho {
                        Some(rho) => println!("{:<18} bound rho={rho:.3e}", ""),
                        None => println!("{:<18} bound: {}", "", b.note),
                    }
                }
            }
            println!("wrote {}", spec.out.display());
            Ok(out.exit_code)
        }
        Command::Compare(a) => {
            let spec = resolve(a)?;
            let report = compare(&spec)?;
            print!("{}", report.table());
            println!("wrote {}", spec.out.display());
            Ok(ndre_cli::EXIT_OK)
        }
        Command::Check { dir, tol } => {
            let (spots, ok) = check(&dir, tol)?;
            let worst = spots.iter().map(|s| s.rel_err).fold(0.0f64, f64::max);
            println!(
                "{} residuals recomputed, worst relative mismatch {worst:.3e}",
                spots.len()
            );
            Ok(if ok { ndre_cli::EXIT_OK } else { 1 })
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("ndre: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
