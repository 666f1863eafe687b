//! Command-line front end.

pub mod generate;
pub mod oracle;
pub mod report;
pub mod scenario;

use std::ffi::OsString;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};

pub use generate::{generate_scenario, BiasKind, Family};
pub use oracle::{brute_force_oracle, OracleError, OracleResult, MAX_ORACLE_SIZE};
pub use report::{Report, TesterSection, Timings, VerifierSection};
pub use scenario::{parse_scenario, ScenarioError, ScenarioFile};

use crate::baseline::{random_test, RandomTestConfig, Strategy, TestOutcome, DEFAULT_BUDGET};
use crate::model::VerdictKind;
use crate::verify::{meta_verify, VerifyConfig};

pub const EXIT_USAGE: i32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RunMode {
    Verify,
    Test,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Text,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StrategyArg {
    UniformPairs,
    ProtectedFlip,
}

impl From<StrategyArg> for Strategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::UniformPairs => Strategy::UniformPairs,
            StrategyArg::ProtectedFlip => Strategy::ProtectedFlip,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "fairverify",
    version,
    about = "Individual fairness verification for linear and kernel models"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Verify and/or randomly test a scenario file.
    Run(RunArgs),
    /// Write a synthetic scenario with a planted or masked protected dependence.
    Generate(GenerateArgs),
    /// Exhaustive grid answer for a small scenario.
    Oracle(OracleArgs),
}

#[derive(Debug, clap::Args)]
pub struct RunArgs {
    pub scenario: PathBuf,
    #[arg(long, value_enum, default_value = "verify")]
    pub mode: RunMode,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Highest SOS relaxation degree for polynomial kernels.
    #[arg(long)]
    pub sos_dmax: Option<u32>,
    #[arg(long, default_value_t = DEFAULT_BUDGET)]
    pub budget: usize,
    #[arg(long, value_enum, default_value = "protected-flip")]
    pub strategy: StrategyArg,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "text")]
    pub format: Format,
}

#[derive(Debug, clap::Args)]
pub struct GenerateArgs {
    #[arg(long, value_enum)]
    pub family: Family,
    #[arg(long, default_value_t = 2)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "planted")]
    pub bias: BiasKind,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
pub struct OracleArgs {
    pub scenario: PathBuf,
    /// Grid points per continuous feature.
    #[arg(long, default_value_t = 21)]
    pub grid: usize,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Scenario { path: String, source: ScenarioError },
    #[error(transparent)]
    Verify(#[from] crate::verify::VerifyError),
    #[error(transparent)]
    Baseline(#[from] crate::baseline::BaselineError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error("{0}")]
    Usage(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Writes via a temporary file in the target directory and renames it into
/// place.
pub fn write_atomic(path: &Path, contents: &str) -> Result<(), CliError> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err(path))?;
    tmp.write_all(contents.as_bytes()).map_err(io_err(path))?;
    tmp.persist(path).map_err(|e| CliError::Io {
        path: path.display().to_string(),
        source: e.error,
    })?;
    Ok(())
}

fn load(path: &Path) -> Result<(ScenarioFile, crate::verify::VerificationTask), CliError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    parse_scenario(&text).map_err(|source| CliError::Scenario {
        path: path.display().to_string(),
        source,
    })
}

/// Builds the report for `run`. The exit code is inside the report.
pub fn run_scenario(args: &RunArgs) -> Result<Report, CliError> {
    if args.workers == 0 {
        return Err(CliError::Usage("--workers must be at least 1".into()));
    }
    let t0 = Instant::now();
    let text = std::fs::read_to_string(&args.scenario).map_err(io_err(&args.scenario))?;
    let parse = t0.elapsed().as_secs_f64();
    let t1 = Instant::now();
    let (file, task) = parse_scenario(&text).map_err(|source| CliError::Scenario {
        path: args.scenario.display().to_string(),
        source,
    })?;
    let mut config = VerifyConfig {
        workers: args.workers,
        rbf: file.rbf_config(),
        ..VerifyConfig::default()
    };
    config.sos.max_degree = args.sos_dmax;
    let build = t1.elapsed().as_secs_f64();
    let mut timings = Timings {
        parse,
        build,
        ..Timings::default()
    };

    let mut verifier = None;
    if matches!(args.mode, RunMode::Verify | RunMode::Both) {
        let t = Instant::now();
        let outcome = meta_verify(&task, &config)?;
        timings.solve = Some(t.elapsed().as_secs_f64());
        let t = Instant::now();
        verifier = Some(VerifierSection::new(&task.model, &outcome));
        timings.aggregate = Some(t.elapsed().as_secs_f64());
    }
    let mut tester = None;
    if matches!(args.mode, RunMode::Test | RunMode::Both) {
        let cfg = RandomTestConfig {
            budget: args.budget,
            seed: args.seed,
            strategy: args.strategy.into(),
            workers: args.workers,
        };
        let outcome = random_test(&task, &cfg)?;
        let elapsed = match &outcome {
            TestOutcome::FoundBias { elapsed, .. } | TestOutcome::NotFound { elapsed, .. } => {
                *elapsed
            }
        };
        timings.test = Some(elapsed.as_secs_f64());
        tester = Some(TesterSection::new(
            &task.model,
            &outcome,
            cfg.budget,
            cfg.seed,
            cfg.strategy,
        ));
    }

    let verdict = match (&verifier, &tester) {
        (Some(v), _) => v.verdict,
        (None, Some(t)) if t.witness.is_some() => VerdictKind::Biased,
        _ => VerdictKind::Inconclusive,
    };
    Ok(Report {
        scenario: args.scenario.display().to_string(),
        family: task.model.family().to_string(),
        n_features: task.n_features(),
        verdict,
        exit_code: verdict.exit_code(),
        verifier,
        tester,
        timings,
    })
}

fn execute(cli: Cli) -> Result<i32, CliError> {
    match cli.command {
        Command::Run(args) => {
            let report = run_scenario(&args)?;
            let rendered = match args.format {
                Format::Json => report.to_json(),
                Format::Text => report.to_text(),
            };
            match &args.out {
                Some(path) => {
                    write_atomic(path, &rendered)?;
                    println!("{} (exit {})", report.verdict, report.exit_code);
                }
                None => print!("{rendered}"),
            }
            Ok(report.exit_code)
        }
        Command::Generate(args) => {
            if args.n < 2 {
                return Err(CliError::Usage("--n must be at least 2".into()));
            }
            let json = generate_scenario(args.family, args.n, args.seed, args.bias).to_json();
            match &args.out {
                Some(path) => write_atomic(path, &json)?,
                None => print!("{json}"),
            }
            Ok(0)
        }
        Command::Oracle(args) => {
            let (_, task) = load(&args.scenario)?;
            let r = brute_force_oracle(&task, args.grid)?;
            println!("pairs checked: {}", r.pairs_checked);
            println!("min gap: {}", r.min_gap);
            println!("argmin: x = {:?}, x' = {:?}", r.argmin.0, r.argmin.1);
            match &r.bias {
                Some((x, xp)) => {
                    println!("bias instance: x = {x:?}, x' = {xp:?}");
                    Ok(VerdictKind::Biased.exit_code())
                }
                None => {
                    println!("no bias instance on the grid");
                    Ok(VerdictKind::NoBias.exit_code())
                }
            }
        }
    }
}

/// Parses `args` (including the program name) and runs the command,
/// returning the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { 0 };
        }
    };
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_USAGE
        }
    }
}
