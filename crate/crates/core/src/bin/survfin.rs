use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use survfin::config::parse_config;
use survfin::error::{Error, Result};
use survfin::experiment::{run_experiment, Overrides};
use survfin::model::{validate, CheckStatus};

#[derive(Parser)]
#[command(name = "survfin", version, about = "Multi-agent market simulator with growth-optimal strategies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the configured market and write its artifacts.
    Run {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        paths: Option<usize>,
        #[arg(long)]
        horizon: Option<usize>,
        /// Output directory (overrides run.output).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check every assumption in every state without simulating.
    Validate { config: PathBuf },
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path)
        .map_err(|e| Error::Config { line: None, message: format!("cannot read {}: {e}", path.display()) })
}

fn run(config: &Path, overrides: Overrides) -> Result<()> {
    let exp = parse_config(&read(config)?)?.build()?;
    let outcome = run_experiment(&exp, &overrides)?;
    let p = &outcome.parameters;
    let a = &outcome.aggregate;
    println!("wrote {} path(s) of {} periods to {}", p.paths, p.horizon, p.output.display());
    println!("min compensator increment: {:.3e}", a.min_compensator_increment);
    println!("min relative wealth of {}: {:.6}", exp.profile.agents[0].name, a.min_r);
    println!("mean final relative wealth: {:.6}", a.mean_final_r);
    Ok(())
}

/// Returns whether every check passed.
fn check(config: &Path) -> Result<bool> {
    let doc = parse_config(&read(config)?)?;
    let env = doc.environment()?;
    let specs = doc.constraint_specs(&env)?;
    doc.solver_options()?;
    doc.validate_run()?;
    let report = validate(&env, &specs)?;
    for state in &report.states {
        println!("state {}", state.state);
        for c in &state.checks {
            let status = match c.status {
                CheckStatus::Pass => "pass",
                CheckStatus::Fail => "FAIL",
                CheckStatus::Info => "info",
            };
            println!("  {status:4} {:18} {}", c.name, c.detail);
        }
    }
    println!("summary");
    for (a, ok) in report.summary() {
        println!("  {:8} {}", a.label(), if ok { "pass" } else { "FAIL" });
    }
    Ok(report.passed())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.command {
        Command::Run { config, seed, paths, horizon, out } => {
            run(&config, Overrides { seed, paths, horizon, out }).map(|()| true)
        }
        Command::Validate { config } => check(&config),
    };
    match res {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
