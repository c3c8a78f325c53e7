//! `blockcs`: batch experiment runner for block compressed sensing.
//!
//! Every subcommand takes a TOML config whose `scenario` field must match
//! the subcommand, runs the experiment deterministically from the config's
//! master seed, and writes CSV/JSON (and PGM mask) artifacts carrying the
//! config hash. `replay` re-runs a config and verifies an artifact byte for
//! byte.

mod config;
mod output;
mod scenarios;

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use config::ExperimentConfig;

#[derive(Parser)]
#[command(
    name = "blockcs",
    version,
    about = "Block compressed sensing experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct RunArgs {
    /// Experiment configuration (TOML).
    config: PathBuf,
    /// Override the config's master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the config's output directory.
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Coherence quantities mu1..mu4 and gamma for one support.
    Coherence(RunArgs),
    /// The drawing distribution minimizing the coherence surrogate.
    #[command(name = "optimal-pi")]
    OptimalPi(RunArgs),
    /// Draw blocks and export the drawn indices and k-space mask.
    Sample(RunArgs),
    /// Basis-pursuit recovery trials (sparse signals or synthetic images).
    Recover(RunArgs),
    /// Phase-transition grid over (s, m).
    Phase(RunArgs),
    /// Golfing-scheme dual certificates with recovery cross-checks.
    Certify(RunArgs),
    /// Rank-based identifiability test over distinct drawn blocks.
    Identify(RunArgs),
    /// Empirical tail checks against the deviation bounds.
    Tailcheck(RunArgs),
    /// Gaussian coherence scaling study.
    #[command(name = "gaussian-scaling")]
    GaussianScaling(RunArgs),
    /// Re-run a config and verify an artifact byte for byte.
    Replay {
        /// Experiment configuration (TOML).
        config: PathBuf,
        /// Artifact file produced by a previous run of this config.
        #[arg(long)]
        file: PathBuf,
    },
}

fn main() {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Coherence(args) => run_scenario("coherence", args),
        Command::OptimalPi(args) => run_scenario("optimal-pi", args),
        Command::Sample(args) => run_scenario("sample", args),
        Command::Recover(args) => run_scenario("recover", args),
        Command::Phase(args) => run_scenario("phase", args),
        Command::Certify(args) => run_scenario("certify", args),
        Command::Identify(args) => run_scenario("identify", args),
        Command::Tailcheck(args) => run_scenario("tailcheck", args),
        Command::GaussianScaling(args) => run_scenario("gaussian-scaling", args),
        Command::Replay { config, file } => replay(&config, &file),
    };
    if let Err(err) = outcome {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}

fn load_with_overrides(subcommand: &str, args: &RunArgs) -> Result<(ExperimentConfig, PathBuf)> {
    let mut config = ExperimentConfig::load(&args.config)?;
    if config.scenario != subcommand {
        bail!(
            "scenario: config declares '{}' but the '{subcommand}' subcommand was invoked",
            config.scenario
        );
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let output_dir = args
        .output_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from(&config.output_dir));
    Ok((config, output_dir))
}

fn run_scenario(subcommand: &str, args: RunArgs) -> Result<()> {
    let (config, output_dir) = load_with_overrides(subcommand, &args)?;
    let artifacts = with_worker_pool(&config, || scenarios::run(&config, &output_dir))?;
    for file in &artifacts.files {
        println!("wrote {}", file.display());
    }
    Ok(())
}

/// All parallelism lives in the runner's pool; the knob does not change any
/// output bytes.
fn with_worker_pool<T>(
    config: &ExperimentConfig,
    body: impl FnOnce() -> Result<T> + Send,
) -> Result<T>
where
    T: Send,
{
    if config.workers == 0 {
        body()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.workers)
            .build()
            .context("workers: cannot build thread pool")?;
        pool.install(body)
    }
}

fn replay(config_path: &std::path::Path, file: &std::path::Path) -> Result<()> {
    let config = ExperimentConfig::load(config_path)?;
    let hash = config.sha256();

    let original =
        std::fs::read(file).with_context(|| format!("cannot read artifact {}", file.display()))?;
    let original_text = String::from_utf8_lossy(&original);
    if !original_text.contains(&hash) {
        bail!(
            "artifact {} does not embed the config hash {hash}; it was produced by a different configuration",
            file.display()
        );
    }

    let file_name = file
        .file_name()
        .ok_or_else(|| anyhow::anyhow!("artifact path has no file name"))?
        .to_string_lossy()
        .to_string();
    let scratch = std::env::temp_dir().join(format!(
        "blockcs-replay-{}-{}",
        std::process::id(),
        &hash[..16]
    ));
    let artifacts = with_worker_pool(&config, || scenarios::run(&config, &scratch))?;
    let regenerated_path = artifacts
        .files
        .iter()
        .find(|p| {
            p.file_name()
                .map(|n| n.to_string_lossy() == file_name)
                .unwrap_or(false)
        })
        .ok_or_else(|| {
            anyhow::anyhow!(
                "scenario '{}' does not produce a file named {file_name}",
                config.scenario
            )
        })?;
    let regenerated = std::fs::read(regenerated_path)?;
    let verdict = regenerated == original;
    std::fs::remove_dir_all(&scratch).ok();
    if verdict {
        println!(
            "replay OK: {} matches its configuration byte for byte",
            file.display()
        );
        Ok(())
    } else {
        bail!(
            "replay MISMATCH: {} differs from the regenerated artifact",
            file.display()
        )
    }
}
