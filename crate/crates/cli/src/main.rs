//! `volstop`: batch front-end for the solvers and verifiers.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod failure;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use config::RunConfig;
use failure::{Failure, EXIT_CHECK_FAILED, EXIT_PASS};

#[derive(Debug, Parser)]
#[command(
    name = "volstop",
    version,
    about = "Optimal stopping under stochastic volatility"
)]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Overrides `mc.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides `output.dir`.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Worker threads; 0 lets rayon decide.
    #[arg(long, global = true, env = "VOLSTOP_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Value surface, thresholds and solver metadata.
    Price,
    /// Run one verification check; exit 1 if it fails.
    Verify {
        #[arg(value_enum)]
        check: Check,
    },
    /// Simulated (t, G, Z, Γ, A, X̃, Ỹ) paths as CSV.
    ExportPaths,
    /// Validate the configuration without running anything.
    Validate,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Check {
    Monotone,
    Coupling,
    Continuity,
    Ordering,
}

fn load(cli: &Cli) -> Result<(RunConfig, PathBuf), Failure> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Failure::input("BadArguments", "--config PATH is required"))?;
    let text = std::fs::read_to_string(path).map_err(|e| Failure::io(e, path))?;
    let mut config = RunConfig::parse(&text)?;
    if let Some(seed) = cli.seed {
        config.mc.seed = seed;
    }
    let out = cli.out.clone().unwrap_or_else(|| config.output.dir.clone());
    Ok((config, out))
}

fn run(cli: &Cli) -> Result<commands::Outcome, Failure> {
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| Failure::input("BadArguments", e.to_string()))?;
    }
    let (config, out) = load(cli)?;
    match cli.command {
        Command::Price => commands::price(&config, &out),
        Command::Verify {
            check: Check::Monotone,
        } => commands::verify_monotone(&config, &out),
        Command::Verify {
            check: Check::Coupling,
        } => commands::verify_coupling(&config, &out),
        Command::Verify {
            check: Check::Continuity,
        } => commands::verify_continuity(&config, &out),
        Command::Verify {
            check: Check::Ordering,
        } => commands::verify_ordering(&config, &out),
        Command::ExportPaths => commands::export_paths(&config, &out),
        Command::Validate => commands::validate(&config, &out),
    }
}

fn report_failure(failure: &Failure) -> ExitCode {
    eprintln!(
        "{}",
        serde_json::to_string(failure).expect("failure serializes")
    );
    ExitCode::from(failure.exit_code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => return report_failure(&Failure::input("BadArguments", e.to_string().trim_end())),
    };
    match run(&cli) {
        Ok(outcome) => {
            println!("{}", outcome.summary);
            if outcome.passed {
                ExitCode::from(EXIT_PASS)
            } else {
                report_failure(&Failure {
                    exit_code: EXIT_CHECK_FAILED,
                    reason: "CheckFailed".into(),
                    message: "verification found a violation; see the report".into(),
                })
            }
        }
        Err(failure) => report_failure(&failure),
    }
}
