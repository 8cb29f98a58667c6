use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use proxsim_cli::config::{seed_offset_from_env, ExperimentConfig};
use proxsim_cli::error::{CliError, Result};
use proxsim_cli::execute::{run_all, RunRecord};
use proxsim_cli::{artifacts, check, suites, write_artifacts};

/// Simulator for minibatch-prox and its distributed variants.
#[derive(Debug, Parser)]
#[command(name = "proxsim", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one experiment config.
    Run {
        config: PathBuf,
        /// Worker threads.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Output directory; defaults to the config's `output_dir` or `out/<name>`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a built-in suite.
    Suite {
        #[arg(value_parser = clap::builder::PossibleValuesParser::new(suites::SUITE_NAMES))]
        name: String,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Output directory; defaults to `out/<suite>`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Directory searched for the `datasets` suite's libsvm files.
        #[arg(long, env = "PROXSIM_DATA_DIR", default_value = "data")]
        data_dir: PathBuf,
    },
    /// Quick invariant battery on small instances.
    Check,
}

/// Exit status 2: the invocation itself was invalid.
const USAGE_FAILURE: u8 = 2;

fn report(name: &str, dir: &std::path::Path, records: &[RunRecord], notes: &[String]) -> Result<bool> {
    let art = artifacts(name, records);
    write_artifacts(dir, &art)?;
    for note in notes {
        println!("note: {note}");
    }
    for line in &art.lines {
        println!("{line}");
    }
    let mut healthy = true;
    for r in records.iter().filter(|r| !r.healthy()) {
        healthy = false;
        let what = match &r.outcome {
            Err(e) => format!("failed: {e}"),
            Ok(_) => format!("{} hard invariant violation(s)", r.hard_violations()),
        };
        eprintln!("{} seed {} axis {:?}: {what}", r.label, r.plan.seed, r.plan.axis_value);
    }
    println!("{} runs, wrote {} files to {}", records.len(), art.files.len(), dir.display());
    Ok(healthy)
}

fn run(cli: Cli) -> Result<bool> {
    let offset = seed_offset_from_env()?;
    match cli.command {
        Command::Run { config, jobs, out } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            cfg.offset_seeds(offset);
            let dir = out
                .or_else(|| cfg.output_dir.clone())
                .unwrap_or_else(|| PathBuf::from("out").join(&cfg.name));
            let records = run_all(std::slice::from_ref(&cfg), jobs)?;
            report(&cfg.name, &dir, &records, &[])
        }
        Command::Suite { name, jobs, out, data_dir } => {
            let dir = out.unwrap_or_else(|| PathBuf::from("out").join(&name));
            let mut suite = suites::load_suite(&name, &data_dir, &dir)?;
            for cfg in &mut suite.configs {
                cfg.offset_seeds(offset);
            }
            let records = run_all(&suite.configs, jobs)?;
            report(&suite.name, &dir, &records, &suite.notes)
        }
        Command::Check => {
            let outcomes = check::run_checks();
            for o in &outcomes {
                println!("{} {}: {}", if o.passed { "PASS" } else { "FAIL" }, o.name, o.detail);
            }
            Ok(outcomes.iter().all(|o| o.passed))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e @ CliError::Config { .. }) => {
            eprintln!("error: {e}");
            ExitCode::from(USAGE_FAILURE)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
