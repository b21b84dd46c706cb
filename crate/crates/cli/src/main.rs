//! `lab`: config-driven experiment runner. Every subcommand reads a JSON
//! config (or falls back to the stock synthetic-data defaults), writes
//! plot-ready CSV artifacts plus a manifest with content digests, and exits
//! zero exactly when all of its checks passed.

#[global_allocator]
static ALLOC: mimalloc::MiMalloc = mimalloc::MiMalloc;

mod checkpoint;
mod commands;
mod config;
mod out;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "lab", version, about = "shallow-attention training-dynamics laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct CommonArgs {
    /// JSON config file; omit to run the built-in defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for CSV artifacts and the manifest.
    #[arg(long)]
    out: PathBuf,
    /// Override the config's base seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// GD/SGD training traces and the convergence-condition report.
    Train(CommonArgs),
    /// Kernel-distance evolution across training, per width.
    Kernel(CommonArgs),
    /// Hessian spectral norm vs width with fitted log-log slope.
    Hessian(CommonArgs),
    /// Data-assumption validators (rank, similarity tail, covariance).
    Assumptions(CommonArgs),
    /// Vector inputs fed as one token vs a sequence of scalars.
    Vector(CommonArgs),
    /// Closed-form limiting kernel vs Monte Carlo and empirical kernels.
    Limit(CommonArgs),
    /// Constants, conditions, and caps for one configuration.
    Bounds(CommonArgs),
}

fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var("LAB_THREADS") {
        let n: usize = v.parse().context("LAB_THREADS must be an integer")?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .context("thread pool init")?;
    }
    Ok(())
}

fn run() -> Result<bool> {
    init_threads()?;
    let cli = Cli::parse();

    macro_rules! dispatch {
        ($args:expr, $cfgty:ty, $module:ident) => {{
            let args: &CommonArgs = $args;
            let mut cfg: $cfgty = config::load_config(args.config.as_deref())?;
            if let Some(s) = args.seed {
                cfg.seed = s;
            }
            let mut out = out::OutDir::create(&args.out)?;
            let outcome = commands::$module::run(&cfg, &mut out)?;
            outcome.print();
            Ok(outcome.all_passed())
        }};
    }

    match &cli.command {
        Command::Train(a) => dispatch!(a, config::TrainConfig, train),
        Command::Kernel(a) => dispatch!(a, config::KernelConfig, kernel),
        Command::Hessian(a) => {
            let args = a;
            let mut cfg: config::HessianConfig = config::load_config(args.config.as_deref())?;
            if let Some(s) = args.seed {
                cfg.seeds = (0..5).map(|i| s + i).collect();
            }
            let mut out = out::OutDir::create(&args.out)?;
            let outcome = commands::hessian::run(&cfg, &mut out)?;
            outcome.print();
            Ok(outcome.all_passed())
        }
        Command::Assumptions(a) => dispatch!(a, config::AssumptionsConfig, assumptions),
        Command::Vector(a) => dispatch!(a, config::VectorConfig, vector),
        Command::Limit(a) => dispatch!(a, config::LimitConfig, limit),
        Command::Bounds(a) => dispatch!(a, config::BoundsConfig, bounds),
    }
}

fn main() {
    match run() {
        Ok(true) => {}
        Ok(false) => std::process::exit(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::exit(2);
        }
    }
}
