//! `betaimpute` — impute missing tabular data with a β-VAE, then score the
//! imputations and run a penalized downstream analysis, all from one JSON
//! config. Stage artifacts land under the configured output directory and
//! every run is a pure function of (input bytes, config).

mod config;
mod stages;

use std::path::PathBuf;
use std::str::FromStr;

use anyhow::{bail, Context};
use betaimpute::samplers::Method;
use clap::{Parser, Subcommand};

use config::RunConfig;

#[derive(Parser)]
#[command(
    name = "betaimpute",
    version,
    about = "Multiple imputation with beta-VAEs: mask, train, impute, evaluate"
)]
struct Cli {
    /// Path to the JSON run configuration (required by every subcommand).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Override the config's global seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Override the config's output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Override the sampling method (single | pg | mwg | sir).
    #[arg(long, global = true)]
    method: Option<String>,

    /// Override β: the training weight for train/cv-free runs and the
    /// sampling weight for impute.
    #[arg(long, global = true)]
    beta: Option<f64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Hide cells from the input and record the held-out truth.
    Mask,
    /// Train a model at the configured β on the masked data.
    Train,
    /// Grid-search (β, epochs) by cross-validation and retrain the winner.
    Cv,
    /// Draw M completions of the masked data.
    Impute,
    /// Score imputations against the held-out truth.
    Evaluate,
    /// Penalized regression on each completion, pooled and selected.
    Downstream,
    /// All configured stages in order.
    Pipeline,
}

fn main() {
    if let Err(e) = run() {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run() -> anyhow::Result<()> {
    let cli = Cli::parse();

    if let Ok(threads) = std::env::var("BETAIMPUTE_THREADS") {
        let n: usize = threads
            .parse()
            .with_context(|| format!("BETAIMPUTE_THREADS must be a thread count, got {threads:?}"))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }

    let Some(config_path) = &cli.config else {
        bail!("no configuration given; pass --config PATH");
    };
    let mut cfg = RunConfig::load(config_path)
        .with_context(|| format!("reading config {}", config_path.display()))?;

    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out = out.clone();
    }
    if let Some(method) = &cli.method {
        cfg.sampler.method = Method::from_str(method)?;
    }
    if let Some(beta) = cli.beta {
        cfg.beta = beta;
        if matches!(cli.command, Command::Impute) {
            cfg.sampler.beta = Some(beta);
        }
    }
    cfg.validate()?;

    match cli.command {
        Command::Mask => stages::cmd_mask(&cfg)?,
        Command::Train => stages::cmd_train(&cfg)?,
        Command::Cv => stages::cmd_cv(&cfg)?,
        Command::Impute => stages::cmd_impute(&cfg)?,
        Command::Evaluate => stages::cmd_evaluate(&cfg)?,
        Command::Downstream => stages::cmd_downstream(&cfg)?,
        Command::Pipeline => stages::cmd_pipeline(&cfg)?,
    }
    Ok(())
}
