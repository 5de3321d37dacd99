#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;
use sha2::{Digest, Sha256};

use commands::{Artifact, Context, RunError};
use config::{ExperimentConfig, Method};

const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "obslab", version, about = "Observability and null-control experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, clap::Args)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// State trajectories.
    Simulate(Common),
    /// Space-time analyticity fits.
    Analyticity(Common),
    /// Hölder pair for a test family.
    Smallness(Common),
    /// Observability certificates.
    Observability {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        method: Option<Method>,
    },
    /// HUM, time-optimal or coupled-system runs.
    Control(Common),
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn write_outputs(dir: &Path, subcommand: &str, seed: u64, config_hash: &str, artifacts: &[Artifact]) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut outputs = Vec::new();
    for a in artifacts {
        std::fs::write(dir.join(&a.name), &a.contents)?;
        outputs.push(json!({ "file": a.name, "sha256": sha256_hex(a.contents.as_bytes()) }));
    }
    let manifest = json!({
        "subcommand": subcommand,
        "seed": seed,
        "config_sha256": config_hash,
        "version": env!("CARGO_PKG_VERSION"),
        "outputs": outputs,
    });
    std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest).unwrap() + "\n")
}

fn run(cli: Cli) -> Result<(), (u8, String)> {
    let (name, common, method) = match &cli.command {
        Command::Simulate(c) => ("simulate", c, None),
        Command::Analyticity(c) => ("analyticity", c, None),
        Command::Smallness(c) => ("smallness", c, None),
        Command::Observability { common, method } => ("observability", common, *method),
        Command::Control(c) => ("control", c, None),
    };
    let text = std::fs::read_to_string(&common.config)
        .map_err(|e| (EXIT_CONFIG, format!("cannot read {}: {e}", common.config.display())))?;
    let cfg = ExperimentConfig::parse(&text).map_err(|e| (EXIT_CONFIG, format!("config error: {e}")))?;
    let seed = common.seed.unwrap_or(cfg.seed);
    let out = common.out.clone().unwrap_or_else(|| cfg.output.clone());
    let mut ctx = Context::new(cfg, seed).map_err(classify)?;
    let artifacts = match &cli.command {
        Command::Simulate(_) => commands::simulate(&mut ctx),
        Command::Analyticity(_) => commands::analyticity(&mut ctx),
        Command::Smallness(_) => commands::smallness(&mut ctx),
        Command::Observability { .. } => commands::observability(&mut ctx, method),
        Command::Control(_) => commands::control(&mut ctx),
    }
    .map_err(classify)?;
    write_outputs(&out, name, seed, &sha256_hex(text.as_bytes()), &artifacts)
        .map_err(|e| (EXIT_CONFIG, format!("cannot write to {}: {e}", out.display())))
}

fn classify(e: RunError) -> (u8, String) {
    match e {
        RunError::Config(_) => (EXIT_CONFIG, e.to_string()),
        RunError::Numerical(_) => (EXIT_NUMERICAL, e.to_string()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err((code, msg)) => {
            eprintln!("obslab: {msg}");
            ExitCode::from(code)
        }
    }
}
