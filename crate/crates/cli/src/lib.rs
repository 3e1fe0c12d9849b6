//! Command-line runner for kicked-rotor experiments: resolves a config,
//! runs a preset and writes CSV tables plus a checksummed manifest.

pub mod config;
pub mod error;
pub mod manifest;
pub mod merge;
pub mod presets;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use config::{ExperimentConfig, Overrides, Preset};
use error::CliError;
use manifest::{Manifest, ERROR_FILE};

#[derive(Debug, Parser)]
#[command(name = "rotor", version, about = "Kicked-rotor gauge-field experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Π₀ traces and free-form ensembles (pi0-trace, custom).
    Simulate(RunArgs),
    /// CBS/CFS contrasts against time or control phase (contrast-dynamics, contrast-sweep).
    Contrast(RunArgs),
    /// Scaling function β(g) from random-phase ensembles (beta-g).
    Beta(RunArgs),
    /// Symmetry class, flux rule and gauge reducibility of a modulation (map-check).
    MapCheck(RunArgs),
    /// Combine finished runs into cross-parameter tables.
    Merge {
        /// Run directories to combine.
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub preset: Option<Preset>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Simulate(_) => "simulate",
            Command::Contrast(_) => "contrast",
            Command::Beta(_) => "beta",
            Command::MapCheck(_) => "map-check",
            Command::Merge { .. } => "merge",
        }
    }

    fn allowed(&self) -> &'static [Preset] {
        match self {
            Command::Simulate(_) => &[Preset::Pi0Trace, Preset::Custom],
            Command::Contrast(_) => &[Preset::ContrastDynamics, Preset::ContrastSweep],
            Command::Beta(_) => &[Preset::BetaG],
            Command::MapCheck(_) => &[Preset::MapCheck],
            Command::Merge { .. } => &[],
        }
    }

    /// Directory that receives outputs, or the error record on failure.
    pub fn out_dir(&self) -> Option<PathBuf> {
        match self {
            Command::Merge { out, .. } => Some(out.clone()),
            Command::Simulate(a) | Command::Contrast(a) | Command::Beta(a) | Command::MapCheck(a) => a.out.clone(),
        }
    }
}

/// Resolves the config of a run subcommand, checking the preset fits it.
pub fn resolve(command: &Command, args: &RunArgs) -> Result<ExperimentConfig, CliError> {
    let allowed = command.allowed();
    let preset = args.preset.or_else(|| args.config.is_none().then(|| allowed[0]));
    let overrides = Overrides { seed: args.seed, output_dir: args.out.clone() };
    let config = ExperimentConfig::load(args.config.as_deref(), preset, &overrides)?;
    if !allowed.contains(&config.preset) {
        let names: Vec<&str> = allowed.iter().map(|p| p.as_str()).collect();
        return Err(CliError::Config(format!(
            "preset {} does not belong to `{}` (expected one of {})",
            config.preset,
            command.name(),
            names.join(", ")
        )));
    }
    Ok(config)
}

pub fn execute(cli: &Cli) -> Result<Manifest, CliError> {
    let command = &cli.command;
    match command {
        Command::Merge { runs, out } => merge::merge_runs(runs, out),
        Command::Simulate(args) | Command::Contrast(args) | Command::Beta(args) | Command::MapCheck(args) => {
            let config = resolve(command, args)?;
            log::info!("preset {} -> {}", config.preset, config.output_dir.display());
            presets::run_preset(&config, command.name(), args.workers)
        }
    }
}

/// Writes `error.json` where the outputs would have gone, best effort.
pub fn write_error_record(cli: &Cli, err: &CliError) -> Option<PathBuf> {
    let dir = cli.command.out_dir().or_else(|| match &cli.command {
        Command::Simulate(a) | Command::Contrast(a) | Command::Beta(a) | Command::MapCheck(a) => {
            resolve(&cli.command, a).ok().map(|c| c.output_dir)
        }
        Command::Merge { .. } => None,
    })?;
    std::fs::create_dir_all(&dir).ok()?;
    let path = dir.join(ERROR_FILE);
    let text = serde_json::to_string_pretty(&err.record(cli.command.name())).ok()?;
    std::fs::write(&path, text + "\n").ok()?;
    Some(path)
}
