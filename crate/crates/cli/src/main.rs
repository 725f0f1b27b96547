//! `pcqa`: command-line pipeline for comparison-based point cloud quality
//! assessment.
//!
//! Exit codes: 0 success, 1 validation error (nothing written), 2 runtime
//! error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::PipelineConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("validation error: {0}")]
    Validation(String),
    #[error("runtime error: {0}")]
    Runtime(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            Self::Validation(_) => 1,
            Self::Runtime(_) => 2,
        }
    }
}

/// Core errors surfacing before any output is written are validation errors;
/// later stages convert explicitly with [`commands::runtime`].
impl From<pcqa_core::Error> for CliError {
    fn from(e: pcqa_core::Error) -> Self {
        Self::Validation(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "pcqa",
    version,
    about = "Comparison-based point cloud quality assessment pipeline"
)]
struct Cli {
    /// TOML pipeline configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the configured global seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the configured output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample labeled pairs and write instruction records per dataset and prompt kind.
    GenPairs,
    /// Plan the alternating texture/geometry training schedule.
    PlanSchedule,
    /// Select one anchor per quality interval for every dataset.
    BuildAnchors,
    /// Render multi-view PPM images for every point cloud sample.
    RenderViews,
    /// Compare tests against anchors, infer scores and report metrics.
    Evaluate,
    /// Compute metrics for a score table against a manifest.
    Metrics {
        /// Score table CSV (overrides `metrics.scores`).
        #[arg(long)]
        scores: Option<PathBuf>,
        /// Manifest with ground-truth MOS (overrides `metrics.manifest`).
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Run a full synthetic experiment in one go.
    Simulate,
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, CliError> {
    let mut config = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = &cli.out {
        config.output_dir = out.clone();
    }
    if let Command::Metrics { scores, manifest } = &cli.command {
        if scores.is_some() {
            config.metrics.scores = scores.clone();
        }
        if manifest.is_some() {
            config.metrics.manifest = manifest.clone();
        }
    }
    config.validate()?;
    Ok(config)
}

fn run(cli: &Cli) -> Result<String, CliError> {
    let config = load_config(cli)?;
    match cli.command {
        Command::GenPairs => commands::gen_pairs(&config),
        Command::PlanSchedule => commands::plan_schedule(&config),
        Command::BuildAnchors => commands::build_anchors(&config),
        Command::RenderViews => commands::render_views(&config),
        Command::Evaluate => commands::evaluate(&config),
        Command::Metrics { .. } => commands::metrics(&config),
        Command::Simulate => commands::simulate(&config),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("pcqa: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
