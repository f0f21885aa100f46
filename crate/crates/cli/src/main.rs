use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use streamflow::experiment::{self, ExperimentConfig, ModelChoice, SUMMARY_FILE};
use streamflow::strategy::StrategyKind;
use streamflow::synth::SynthRegionSpec;

#[derive(Parser)]
#[command(
    name = "streamflow",
    version,
    about = "Multi-step streamflow forecasting experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train, evaluate and write result tables for a config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory, replacing `output_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Base seed, replacing `seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Run only this strategy.
        #[arg(long)]
        strategy: Option<StrategyKind>,
        /// Run only this model.
        #[arg(long)]
        model: Option<ModelChoice>,
    },
    /// Check a config and print its diagnostics.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Write a synthetic region as ingest-format CSVs.
    Synth {
        /// JSON region spec; defaults apply to absent keys.
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_with_overrides(
    path: &Path,
    out: Option<PathBuf>,
    seed: Option<u64>,
    strategy: Option<StrategyKind>,
    model: Option<ModelChoice>,
) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(o) = out {
        cfg.output_dir = o;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(s) = strategy {
        cfg.strategies = vec![s];
    }
    if let Some(m) = model {
        cfg.models = vec![m];
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run {
            config,
            out,
            seed,
            strategy,
            model,
        } => {
            let cfg = load_with_overrides(&config, out, seed, strategy, model)?;
            let result = experiment::run(&cfg)?;
            log::info!(
                "{} reports written to {}",
                result.reports.len(),
                cfg.output_dir.join(SUMMARY_FILE).display()
            );
            Ok(())
        }
        Command::Validate { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let diagnostics = experiment::validate(&cfg);
            if diagnostics.is_empty() {
                println!("ok");
                return Ok(());
            }
            for d in &diagnostics {
                println!("{d}");
            }
            bail!("{} problem(s) in {}", diagnostics.len(), config.display())
        }
        Command::Synth { spec, out } => {
            let text = std::fs::read_to_string(&spec).with_context(|| format!("reading {}", spec.display()))?;
            let region: SynthRegionSpec =
                serde_json::from_str(&text).with_context(|| format!("parsing {}", spec.display()))?;
            let files = region.write_csv(&out)?;
            for f in files {
                println!("{}", f.display());
            }
            Ok(())
        }
    }
}
