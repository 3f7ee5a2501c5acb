//! `flowcast`: batch front end for ingestion, statistics, baselines,
//! training, prediction, evaluation and synthetic fixtures.

mod commands;
mod error;
mod run;

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use flowcast_core::config::RunConfig;

use crate::error::{CliError, CliResult};
use crate::run::Run;

#[derive(Debug, Parser)]
#[command(name = "flowcast", version, about = "Link and flow prediction for monthly transfer networks")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Global {
    /// Config file of `key = value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Base settings before the config file: `default` or `ci`.
    #[arg(long, global = true, default_value = "default")]
    profile: String,
    /// `key=value` override, applied after the config file. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Edge CSV with header `src,dst,timestamp,amount`.
    #[arg(long)]
    pub edges: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Edgebank,
    EdgebankTw,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Target {
    Ratio,
    Volume,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Variant {
    Hier,
    Flat,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Builds monthly snapshots and their decomposition.
    Ingest(DataArgs),
    /// Summary statistics, CCDFs and power-law fits.
    Stats(DataArgs),
    /// EdgeBank predictions and metrics on the test months.
    Baseline {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_enum, default_value = "edgebank")]
        method: Method,
        #[arg(long, value_enum, default_value = "ratio")]
        target: Target,
        /// Months to predict, `a..b` or `a,b,c`. Defaults to the test split.
        #[arg(long)]
        months: Option<String>,
    },
    /// Trains the ratio and volume models on the training split.
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_enum, default_value = "hier")]
        variant: Variant,
    },
    /// Predicts ratios, volumes and flows from trained checkpoints.
    Predict {
        #[command(flatten)]
        data: DataArgs,
        /// Ratio model checkpoint written by `train`.
        #[arg(long)]
        model: PathBuf,
        /// Volume model checkpoint written by `train`.
        #[arg(long)]
        volume_model: Option<PathBuf>,
        /// Months to predict, `a..b` or `a,b,c`. Defaults to the test split.
        #[arg(long)]
        months: Option<String>,
    },
    /// Scores ratio and volume predictions against the observed months.
    Evaluate {
        #[command(flatten)]
        data: DataArgs,
        /// Ratio predictions as `t,src,dst,amount`.
        #[arg(long)]
        ratios: PathBuf,
        /// Volume predictions as `t,node,volume`.
        #[arg(long)]
        volumes: Option<PathBuf>,
    },
    /// Generates a synthetic transfer network with known structure.
    Synth(commands::SynthArgs),
    /// Runs every baseline and model end to end and reports all metrics.
    Experiment(DataArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Ingest(_) => "ingest",
            Command::Stats(_) => "stats",
            Command::Baseline { .. } => "baseline",
            Command::Train { .. } => "train",
            Command::Predict { .. } => "predict",
            Command::Evaluate { .. } => "evaluate",
            Command::Synth(_) => "synth",
            Command::Experiment(_) => "experiment",
        }
    }
}

/// Profile, then config file, then `--set`, then `--seed`.
fn resolve_config(g: &Global) -> CliResult<RunConfig> {
    let mut config = RunConfig::profile(&g.profile)?;
    if let Some(path) = &g.config {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        config.apply_text(&text)?;
    }
    for kv in &g.set {
        config.apply_override(kv)?;
    }
    if let Some(seed) = g.seed {
        config.seed = seed;
    }
    Ok(config.finalize()?)
}

fn execute(cli: Cli) -> CliResult<()> {
    let config = resolve_config(&cli.global)?;
    let mut run = Run::new(cli.command.name(), config, cli.global.profile.clone(), cli.global.out.clone())?;
    match &cli.command {
        Command::Ingest(d) => commands::ingest(&mut run, d)?,
        Command::Stats(d) => commands::stats(&mut run, d)?,
        Command::Baseline {
            data,
            method,
            target,
            months,
        } => commands::baseline(&mut run, data, *method, *target, months.as_deref())?,
        Command::Train { data, variant } => commands::train(&mut run, data, *variant)?,
        Command::Predict {
            data,
            model,
            volume_model,
            months,
        } => commands::predict(&mut run, data, model, volume_model.as_deref(), months.as_deref())?,
        Command::Evaluate { data, ratios, volumes } => commands::evaluate(&mut run, data, ratios, volumes.as_deref())?,
        Command::Synth(a) => commands::synth(&mut run, a)?,
        Command::Experiment(d) => commands::experiment(&mut run, d)?,
    }
    run.finish()
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let err = CliError::Usage(e.to_string().trim().to_string());
            eprintln!("{}", err.to_json());
            return ExitCode::from(err.exit_code() as u8);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("{}", err.to_json());
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
