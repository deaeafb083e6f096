use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use drsopo::harness::{
    parse_constants, run_experiment, run_oracle_suite, schedule_calc, ExperimentConfig, HarnessError, OracleScope,
};
use drsopo::optimizers::{Algorithm, ScheduleVariant};

/// Seeded experiments, oracle cross-checks and theory schedules for
/// dimension-reduced second-order policy optimization.
#[derive(Debug, Parser)]
#[command(name = "sopo", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run repeated seeded experiments and write traces and summaries.
    Run {
        /// Flat `key = value` experiment file; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Base seed; repeat k uses a seed derived from (seed, k).
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Algorithm to run; repeat the flag to run several with one config.
        #[arg(long = "algo", value_parser = parse_algorithm)]
        algos: Vec<Algorithm>,
        /// `key=value` applied after the config file; may be repeated.
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Run the enumeration, finite-difference and grid-search cross-checks.
    Oracle {
        #[arg(value_enum, default_value_t = Scope::All)]
        scope: Scope,
        /// Directory for the JSON report.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the theory-driven batch sizes, radius and sample counts.
    Schedule {
        /// Target accuracy.
        #[arg(long)]
        epsilon: f64,
        /// `key = value` constants file; unit constants when omitted.
        #[arg(long)]
        constants: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Variant::Dr)]
        variant: Variant,
        /// Parameter dimension; overrides `dim` from the constants file.
        #[arg(long)]
        dim: Option<usize>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Scope {
    Estimators,
    Solver,
    All,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Variant {
    Dr,
    Dvr,
    Fdtr,
}

fn parse_algorithm(s: &str) -> Result<Algorithm, String> {
    s.parse().map_err(|e: drsopo::optimizers::OptimizerError| e.to_string())
}

fn run_command(
    config: Option<PathBuf>,
    seed: Option<u64>,
    out: Option<PathBuf>,
    algos: Vec<Algorithm>,
    overrides: Vec<String>,
) -> Result<(), HarnessError> {
    let mut cfg = match &config {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => ExperimentConfig::default(),
    };
    for o in &overrides {
        cfg.apply_override(o)?;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(o) = out {
        cfg.out = o;
    }
    let algos = if algos.is_empty() { vec![cfg.run.algorithm] } else { algos };
    let configs: Vec<ExperimentConfig> = algos
        .into_iter()
        .map(|a| {
            let mut c = cfg.clone();
            c.run.algorithm = a;
            c
        })
        .collect();
    for c in &configs {
        c.validate()?;
    }
    for c in &configs {
        let output = run_experiment(c)?;
        match output.summary.last() {
            Some(last) => println!(
                "{}: return {:.6} ± {:.6} at {} env steps over {} repeats -> {}",
                c.run.algorithm,
                last.mean,
                last.std,
                last.env_steps,
                last.n,
                output.summary_path.display()
            ),
            None => println!("{}: no returns recorded -> {}", c.run.algorithm, output.summary_path.display()),
        }
    }
    Ok(())
}

fn oracle_command(scope: Scope, out: Option<PathBuf>) -> Result<i32, HarnessError> {
    let scope = match scope {
        Scope::Estimators => OracleScope::Estimators,
        Scope::Solver => OracleScope::Solver,
        Scope::All => OracleScope::All,
    };
    let report = run_oracle_suite(scope);
    for c in &report.checks {
        println!("{}", c.line());
    }
    println!("{}", if report.passed { "oracle suite passed" } else { "oracle suite FAILED" });
    if let Some(dir) = out {
        std::fs::create_dir_all(&dir).map_err(|e| HarnessError::Io { path: dir.clone(), source: e })?;
        let path = dir.join(format!("oracle_{scope}.json"));
        std::fs::write(&path, serde_json::to_string_pretty(&report)?)
            .map_err(|e| HarnessError::Io { path: path.clone(), source: e })?;
    }
    Ok(report.exit_code())
}

fn schedule_command(
    epsilon: f64,
    constants: Option<PathBuf>,
    variant: Variant,
    dim: Option<usize>,
) -> Result<(), HarnessError> {
    let (c, file_dim) = match &constants {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Io { path: path.clone(), source: e })?;
            parse_constants(&text, &path.display().to_string())?
        }
        None => parse_constants("", "unit")?,
    };
    let variant = match variant {
        Variant::Dr => ScheduleVariant::Dr,
        Variant::Dvr => ScheduleVariant::Dvr,
        Variant::Fdtr => ScheduleVariant::Fdtr,
    };
    println!("{}", schedule_calc(epsilon, &c, dim.unwrap_or(file_dim), variant)?);
    Ok(())
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Run { config, seed, out, algos, overrides } => run_command(config, seed, out, algos, overrides).map(|_| 0),
        Command::Oracle { scope, out } => oracle_command(scope, out),
        Command::Schedule { epsilon, constants, variant, dim } => {
            schedule_command(epsilon, constants, variant, dim).map(|_| 0)
        }
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
