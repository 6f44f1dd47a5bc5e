//! Argument parsing and dispatch.
//!
//! Exit codes: 0 success, 1 usage, 2 invalid input or schema, 3 numerical
//! failure, 4 iteration budget exhausted. Diagnostics go to standard error
//! as structured `key=value` lines.

use std::ffi::OsString;
use std::path::PathBuf;
use std::time::Instant;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use crate::config::PipelineConfig;
use crate::experiments;
use crate::io;
use crate::ioerr::IoError;
use crate::pipeline;
use crate::report::emit_report;

/// Simulation workbench for reward-free multitask representation learning
/// in finite low-rank MDPs.
#[derive(Parser, Debug)]
#[command(name = "refuel", version, disable_help_subcommand = true)]
struct Cli {
    /// Output directory holding the run's artifacts.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// JSON pipeline configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed override (highest precedence, above REFUEL_SEED and the file).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker count for grid subcommands.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a task family and its model classes.
    Gen,
    /// Run reward-free multitask exploration on the generated family.
    Upstream,
    /// Offline pessimistic planning on the downstream task.
    Offline,
    /// Online optimistic planning on the downstream task.
    Online,
    /// Evaluate a learned representation against the saved family.
    Eval,
    /// Multitask-benefit grid over task counts.
    Compare,
}

/// Run the CLI on explicit arguments and return the process exit code.
pub fn dispatch<I, A>(argv: I) -> i32
where
    I: IntoIterator<Item = A>,
    A: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    print!("{e}");
                    return 0;
                }
                _ => 1,
            };
            eprintln!("{e}");
            eprintln!("error code={code} kind=usage");
            return code;
        }
    };
    let Some(out) = cli.out.clone() else {
        eprintln!(
            "usage: refuel <subcommand> --out <dir> [--config <file>] [--seed <u64>] [--jobs <n>]"
        );
        eprintln!("error code=1 kind=usage msg=\"--out <dir> is required\"");
        return 1;
    };
    match run(cli, out) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!(
                "error code={} kind={} msg={:?}",
                e.exit_code(),
                e.kind(),
                e.to_string()
            );
            e.exit_code()
        }
    }
}

fn env_seed() -> Result<Option<u64>, IoError> {
    match std::env::var("REFUEL_SEED") {
        Ok(text) => text
            .parse::<u64>()
            .map(Some)
            .map_err(|_| IoError::Schema(format!("REFUEL_SEED is not a u64: {text:?}"))),
        Err(_) => Ok(None),
    }
}

fn run(cli: Cli, out: PathBuf) -> Result<(), IoError> {
    std::fs::create_dir_all(&out)?;

    let file_config: PipelineConfig = match &cli.config {
        Some(path) => io::load_plain(path)?,
        None => PipelineConfig::default(),
    };
    let cfg = file_config.resolve(cli.seed, env_seed()?)?;

    // Every run writes its fully resolved configuration beside its outputs.
    io::save_canonical(&out.join("resolved_config.json"), &cfg)?;

    let started = Instant::now();
    let result = match cli.command {
        Command::Gen => pipeline::cmd_gen(&cfg, &out),
        Command::Upstream => pipeline::cmd_upstream(&cfg, &out),
        Command::Offline => pipeline::cmd_offline(&cfg, &out),
        Command::Online => pipeline::cmd_online(&cfg, &out),
        Command::Eval => pipeline::cmd_eval(&cfg, &out),
        Command::Compare => {
            let mut report = experiments::multitask_benefit(&cfg, cli.jobs)?;
            report.wall_clock_secs = started.elapsed().as_secs_f64();
            emit_report(&report, &out, "compare_report")?;
            Ok(())
        }
    };
    eprintln!(
        "info wall_clock_secs={:.3} out={}",
        started.elapsed().as_secs_f64(),
        out.display()
    );
    result
}
