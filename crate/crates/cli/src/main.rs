use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use lapstrat::pipeline::{run_stages, RunConfig, Stage};

/// Traffic-aware energy strategy toolkit for hybrid race cars.
#[derive(Debug, Parser)]
#[command(name = "lapstrat", version)]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every randomised stage (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (overrides the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset (sector times, circuit, vehicle, reference profile).
    Synth,
    /// Clean the sector-time table.
    Ingest,
    /// Free sector-time distributions and overtaking probabilities.
    Stats,
    /// Traffic-free energy strategies with the genetic algorithm.
    Optimize,
    /// Monte Carlo traffic batch.
    Simulate,
    /// Score the strategies against the traffic batch.
    Evaluate,
    /// Lap-by-lap strategy choice over a stint with confidence interval.
    Stint,
    /// Every stage in order.
    Run {
        /// Use the configured input files instead of generating synthetic data.
        #[arg(long)]
        no_synth: bool,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run() -> anyhow::Result<()> {
    let cli = Cli::parse();
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = Some(seed);
    }
    if let Some(out) = cli.out {
        cfg.out_dir = out;
    }
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build_global()
            .context("configuring the thread pool")?;
    }
    let stages: Vec<Stage> = match cli.command {
        Command::Synth => vec![Stage::Synth],
        Command::Ingest => vec![Stage::Ingest],
        Command::Stats => vec![Stage::Stats],
        Command::Optimize => vec![Stage::Optimize],
        Command::Simulate => vec![Stage::Simulate],
        Command::Evaluate => vec![Stage::Evaluate],
        Command::Stint => vec![Stage::Stint],
        Command::Run { no_synth } => Stage::ALL
            .into_iter()
            .filter(|s| !(no_synth && *s == Stage::Synth))
            .collect(),
    };
    for m in run_stages(&cfg, &stages)? {
        log::info!("{} done: {} artifacts", m.stage, m.outputs.len());
    }
    Ok(())
}
