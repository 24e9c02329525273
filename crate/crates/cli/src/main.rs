//! `syncstab` — experiment driver for the mean-field oscillator stability
//! suite.
//!
//! Exit codes: 0 = all checks passed, 1 = a check failed or a numerical
//! operation rejected its input, 2 = usage or configuration error.
//! Set `SYNCSTAB_LOG=info` (or `debug`) for progress logging.

mod commands;
mod config;
mod output;

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::error;

use config::ExperimentConfig;
use output::{config_hash, OutputDir};

#[derive(Parser)]
#[command(name = "syncstab", version, about = "Mean-field oscillator stability experiments")]
struct Cli {
    /// Experiment config (JSON); built-in Winfree defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides run.output_dir).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Root seed (overrides run.seeds[0]).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Parallel workers for independent sweep points.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    /// Horizon override (overrides run.horizon).
    #[arg(long, global = true)]
    horizon: Option<f64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Verify the synchronization hypotheses of the configured model.
    CheckHypotheses,
    /// Integrate the flow and monitor dispersion and velocities.
    Simulate,
    /// Decompose the fundamental matrix of the configured linear system.
    LinearDecompose,
    /// Evaluate the stability linear form of the configured linear system.
    Psi,
    /// Closed-form periodic-solution suite on random periodic coefficients.
    Delta,
    /// Locate the locked periodic orbit by shooting.
    LockedOrbit,
    /// Build the stable-manifold chart and certify contraction rates.
    StableManifold,
    /// Measure the contraction rate between two nearby trajectories.
    Contraction,
    /// Run the full verification suite and aggregate the results.
    Report,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SYNCSTAB_LOG", "off")).init();
    let cli = Cli::parse();

    // configuration phase: any failure here is a usage error (exit 2)
    let (config, raw) = match load_config(&cli) {
        Ok(pair) => pair,
        Err(e) => {
            error!("configuration error: {e:#}");
            eprintln!("configuration error: {e:#}");
            return ExitCode::from(2);
        }
    };
    let hash = config_hash(&raw);
    let out_root = cli
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(&config.run.output_dir));
    let seed = cli.seed.unwrap_or_else(|| config.run.seeds.first().copied().unwrap_or(0));
    let mut out = match OutputDir::create(&out_root) {
        Ok(out) => out,
        Err(e) => {
            eprintln!("configuration error: {e:#}");
            return ExitCode::from(2);
        }
    };

    // execution phase: failures are check failures (exit 1)
    let outcomes = match run(cli.command, &config, &mut out, seed, cli.jobs) {
        Ok(outcomes) => outcomes,
        Err(e) => {
            error!("check failed: {e:#}");
            eprintln!("check failed: {e:#}");
            return ExitCode::from(1);
        }
    };
    let passed = outcomes.iter().all(|o| o.passed);
    for outcome in &outcomes {
        println!(
            "{}: {}",
            outcome.name,
            if outcome.passed { "pass" } else { "FAIL" }
        );
    }
    if let Err(e) = out.finish(hash, outcomes) {
        eprintln!("cannot write manifest: {e:#}");
        return ExitCode::from(1);
    }
    if passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

fn load_config(cli: &Cli) -> anyhow::Result<(ExperimentConfig, Vec<u8>)> {
    let mut config = match &cli.config {
        Some(path) => {
            let bytes = fs::read(path)
                .map_err(|e| anyhow::anyhow!("cannot read {}: {e}", path.display()))?;
            serde_json::from_slice::<ExperimentConfig>(&bytes)
                .map_err(|e| anyhow::anyhow!("invalid config {}: {e}", path.display()))?
        }
        None => ExperimentConfig::default_winfree(),
    };
    if let Some(h) = cli.horizon {
        if !(h > 0.0) {
            anyhow::bail!("--horizon must be positive, got {h}");
        }
        config.run.horizon = h;
    }
    if let Some(seed) = cli.seed {
        config.run.seeds = vec![seed];
    }
    // config validity gate: the model must materialize
    commands::validate_model(&config.model)?;
    let raw = serde_json::to_vec_pretty(&config)?;
    Ok((config, raw))
}

fn run(
    command: Command,
    config: &ExperimentConfig,
    out: &mut OutputDir,
    seed: u64,
    jobs: usize,
) -> anyhow::Result<Vec<output::CheckOutcome>> {
    match command {
        Command::CheckHypotheses => commands::check_hypotheses(config, out),
        Command::Simulate => commands::simulate(config, out),
        Command::LinearDecompose => commands::linear_decompose(config, out),
        Command::Psi => commands::psi_cmd(config, out),
        Command::Delta => commands::delta(config, out, seed),
        Command::LockedOrbit => commands::locked_orbit(config, out),
        Command::StableManifold => commands::stable_manifold(config, out, jobs),
        Command::Contraction => commands::contraction(config, out),
        Command::Report => commands::report(config, out, seed, jobs),
    }
}
