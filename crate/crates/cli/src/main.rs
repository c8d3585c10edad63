mod config;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{ConfigError, Format, PartialConfig, RunConfig};
use mixfem::analysis::{run_convergence_study, sci};
use mixfem::properties::property_suite;
use mixfem::Error;

const EXIT_CONFIG: u8 = 2;
const EXIT_IO: u8 = 3;
const EXIT_SOLVER: u8 = 4;
const EXIT_INVARIANT: u8 = 5;

#[derive(Parser)]
#[command(name = "mixfem", version, about = "Stabilized mixed finite elements for linear elasticity")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a convergence study and write the error table.
    Run(RunArgs),
    /// Run the structural property suite.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct RunArgs {
    /// JSON file with any of the flag values; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// stab-div, bubble-cont or hood-taylor.
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    k: Option<u32>,
    #[arg(long)]
    dim: Option<usize>,
    /// Inclusive range of levels A:B, mesh size h = 2^-level.
    #[arg(long)]
    levels: Option<String>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    mu: Option<f64>,
    /// Output file; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<Format>,
    /// Accepted for configuration-file symmetry; studies are deterministic.
    #[arg(long)]
    seed: Option<u64>,
    /// Levels solved concurrently.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Failure {
            code,
            message: message.into(),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Invalid(m) => Failure::new(EXIT_CONFIG, m),
            ConfigError::Io(m) => Failure::new(EXIT_IO, m),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::InvalidInput(_) | Error::Capability(_) => EXIT_CONFIG,
            Error::Io(_) => EXIT_IO,
            Error::Singular { .. } | Error::NotConverged { .. } => EXIT_SOLVER,
            Error::DegenerateElement { .. } | Error::Structural { .. } | Error::PropertyViolation(_) => {
                EXIT_INVARIANT
            }
        };
        Failure::new(code, e.to_string())
    }
}

fn load_file(path: &Option<PathBuf>) -> Result<PartialConfig, Failure> {
    Ok(match path {
        Some(p) => PartialConfig::from_file(p)?,
        None => PartialConfig::default(),
    })
}

fn write_output(out: &Option<PathBuf>, text: &str) -> Result<(), Failure> {
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| Failure::new(EXIT_IO, format!("{}: {e}", path.display()))),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| Failure::new(EXIT_IO, e.to_string())),
    }
}

fn run(args: RunArgs) -> Result<(), Failure> {
    let flags = PartialConfig {
        method: args.method,
        k: args.k,
        dim: args.dim,
        levels: args.levels,
        lambda: args.lambda,
        mu: args.mu,
        out: args.out,
        format: args.format,
        seed: args.seed,
        threads: args.threads,
    };
    let config = RunConfig::resolve(load_file(&args.config)?.overlay(flags))
        .map_err(|m| Failure::new(EXIT_CONFIG, m))?;
    let report = run_convergence_study(&config.study())?;
    for r in &report.rows {
        eprintln!(
            "h = {:<9} unknowns {:>8}  factor {:>11}  e_sigma {}  e_u_l2 {}  residual {:.1e}  {:.1?}",
            r.h,
            r.n_unknowns,
            r.solve.factor_nnz,
            sci(r.e_sigma),
            sci(r.e_u_l2),
            r.solve.residual,
            r.elapsed
        );
    }
    let text = match config.format {
        Format::Csv => report.to_csv(),
        Format::Md => report.to_markdown(),
    };
    write_output(&config.out, &text)
}

fn verify(args: VerifyArgs) -> Result<(), Failure> {
    let file = load_file(&args.config)?;
    let seed = args.seed.or(file.seed).unwrap_or(0);
    let checks = property_suite(seed)?;
    let mut failed = 0;
    for c in &checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
        failed += usize::from(!c.passed);
    }
    if failed > 0 {
        return Err(Failure::new(EXIT_INVARIANT, format!("{failed} of {} checks failed", checks.len())));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => run(a),
        Command::Verify(a) => verify(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
