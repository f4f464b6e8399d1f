//! `seqmc`: run tempered sequential Monte Carlo experiments on finite state
//! spaces and verify their moment identities and error bounds exactly.

mod commands;
mod config;
mod model;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::ExperimentConfig;

type CommandFn = fn(&ExperimentConfig, u64, &std::path::Path) -> anyhow::Result<i32>;

#[derive(Parser)]
#[command(
    name = "seqmc",
    about = "Tempered sequential Monte Carlo with exact propagator verification",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run replicated particle simulations and write per-replication
    /// estimates to estimates.csv.
    Run(CommonArgs),
    /// Verify moment identities, error-transfer bounds and the stability
    /// inequalities; exit 1 on any failed check.
    Verify(CommonArgs),
    /// Evaluate the stability-constant chain and error bounds into
    /// bounds.json.
    Bounds(CommonArgs),
    /// Sweep the product-model dimension and write sweep.csv.
    DimSweep(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Path to the experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed (highest precedence, above SEQMC_SEED).
    #[arg(long)]
    seed: Option<u64>,
    /// Replication worker threads; defaults to available parallelism.
    /// Results are independent of this value.
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory; defaults to the config's output.dir.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let (args, run): (&CommonArgs, CommandFn) = match &cli.command {
        Command::Run(a) => (a, commands::cmd_run),
        Command::Verify(a) => (a, commands::cmd_verify),
        Command::Bounds(a) => (a, commands::cmd_bounds),
        Command::DimSweep(a) => (a, commands::cmd_dim_sweep),
    };

    match execute(args, run) {
        Ok(code) => ExitCode::from(code as u8),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(2)
        }
    }
}

fn execute(args: &CommonArgs, run: CommandFn) -> anyhow::Result<i32> {
    let config = ExperimentConfig::load(&args.config)?;

    // Seed precedence: --seed flag, then SEQMC_SEED, then the config.
    let seed = match (args.seed, std::env::var("SEQMC_SEED").ok()) {
        (Some(s), _) => s,
        (None, Some(env)) => env
            .parse::<u64>()
            .map_err(|_| anyhow::anyhow!("SEQMC_SEED must be an unsigned integer, got {env:?}"))?,
        (None, None) => config.run.seed,
    };

    let out_dir = args.out.clone().unwrap_or_else(|| config.output.dir.clone());
    std::fs::create_dir_all(&out_dir)
        .map_err(|e| anyhow::anyhow!("cannot create output directory {}: {e}", out_dir.display()))?;

    let threads = args.threads.or(config.run.threads).unwrap_or(0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| anyhow::anyhow!("cannot build thread pool: {e}"))?;
    pool.install(|| run(&config, seed, &out_dir))
}
