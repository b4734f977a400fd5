use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::Context;
use bgsim::harness::{self, Report};
use clap::{Parser, Subcommand};

/// Run, explore, check and replay simulation scenarios.
///
/// Exit status: 0 when every check holds, 2 when one is refuted, 3 when a
/// budget ran out first, 1 on bad input.
#[derive(Parser, Debug)]
#[command(name = "simcli", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Debug)]
struct Common {
    /// Scenario config, or a trace or history file for `check`/`replay`.
    file: PathBuf,
    /// First seed; overrides `[schedule] seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Step budget for runs, depth bound for exploration.
    #[arg(long)]
    budget: Option<usize>,
    /// Directory for traces and reports.
    #[arg(long, env = "SIMCLI_OUT")]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Execute seeded runs of a scenario and check them.
    Run(Common),
    /// Enumerate every schedule of a scenario up to the depth bound.
    Explore(Common),
    /// Check a history or trace file, or run a scenario config.
    Check(Common),
    /// Re-execute a trace file, verifying every digest.
    Replay(Common),
}

fn read(path: &Path) -> anyhow::Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn execute(cmd: &Command) -> anyhow::Result<Report> {
    Ok(match cmd {
        Command::Run(c) => {
            let sc = harness::scenario_with_overrides(&read(&c.file)?, c.seed, c.budget, false)?;
            harness::run_scenario(&sc, c.out.as_deref())?
        }
        Command::Explore(c) => {
            let sc = harness::scenario_with_overrides(&read(&c.file)?, c.seed, c.budget, true)?;
            harness::explore_scenario(&sc, c.out.as_deref())?
        }
        Command::Check(c) => harness::check_file(&c.file, c.out.as_deref(), c.seed, c.budget)?,
        Command::Replay(c) => harness::replay_file(&c.file, c.out.as_deref())?,
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let start = Instant::now();
    match execute(&cli.command) {
        Ok(report) => {
            print!("{}", report.to_text());
            eprintln!("elapsed {:.2}s", start.elapsed().as_secs_f64());
            ExitCode::from(report.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
