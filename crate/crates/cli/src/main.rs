use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use guirl_core::harness::{self, HarnessError, RunConfig};
use tracing_subscriber::EnvFilter;

/// Explore apps, filter tasks, train and evaluate a GUI agent policy.
#[derive(Parser, Debug)]
#[command(name = "guirl", version)]
struct Cli {
    /// JSON run configuration; keys are run-config field names.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the config output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Random walks over every app, labeled into candidate tasks.
    Explore,
    /// Feasibility filter and curriculum over the candidate tasks.
    Filter,
    /// Train on the task set.
    Train {
        /// Resume from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Greedy success rate of a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        tasks: Option<PathBuf>,
    },
    /// Re-simulate a trajectory log and check its state digests.
    Replay {
        #[arg(long)]
        log: Option<PathBuf>,
        /// Only trajectories of this task.
        #[arg(long)]
        task: Option<String>,
    },
}

fn config(cli: &Cli) -> Result<RunConfig, HarnessError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out = o.clone();
    }
    match &cli.command {
        Command::Train { resume: Some(p) } => cfg.checkpoint = Some(p.clone()),
        Command::Eval { checkpoint, tasks } => {
            if checkpoint.is_some() {
                cfg.checkpoint = checkpoint.clone();
            }
            if tasks.is_some() {
                cfg.tasks = tasks.clone();
            }
        }
        Command::Replay { log: Some(p), .. } => cfg.trajectory_log = Some(p.clone()),
        _ => {}
    }
    cfg.check_paths()?;
    Ok(cfg)
}

fn print_json(v: &impl serde::Serialize) {
    println!("{}", serde_json::to_string_pretty(v).expect("summary serializes"));
}

fn run(cli: &Cli) -> Result<(), HarnessError> {
    let cfg = config(cli)?;
    match &cli.command {
        Command::Explore => print_json(&harness::cmd_explore(&cfg)?),
        Command::Filter => {
            let s = harness::cmd_filter(&cfg)?;
            println!("admitted {}/{} tasks", s.admitted, s.total);
            for (reason, n) in &s.rejected {
                println!("  rejected ({reason}): {n}");
            }
        }
        Command::Train { .. } => print_json(&harness::cmd_train(&cfg)?),
        Command::Eval { .. } => print_json(&harness::cmd_eval(&cfg)?),
        Command::Replay { task, .. } => print!("{}", harness::cmd_replay(&cfg, task.as_deref())?),
    }
    Ok(())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
