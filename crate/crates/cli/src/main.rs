//! patex: batch front-end for the patent-task exposure pipeline.

mod config;
mod manifest;
mod stages;

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use config::{Overrides, PipelineConfig};

#[derive(Parser)]
#[command(
    name = "patex",
    version,
    about = "Maps patent abstracts to occupational tasks and aggregates technology exposure scores"
)]
struct Cli {
    /// Pipeline configuration file (key = value lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Worker threads; 0 or unset picks the default. Never affects output bytes.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Output directory, overriding the config's `out` key.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    stage: Stage,
}

#[derive(Subcommand, Clone, Copy)]
enum Stage {
    /// Load, filter, and deduplicate the raw corpus files.
    Ingest,
    /// Normalize patent abstracts and task statements into tokens.
    Prep,
    /// Build corpus statistics, task queries, and word-similarity matrices.
    Index,
    /// Score every task against every patent and merge the two runs.
    Score,
    /// Classify patents against the technology-field concordance.
    Classify,
    /// Aggregate exposure scores to tasks, occupations, and clusters.
    Aggregate,
    /// Correlate exposure with external indices; smooth and regress.
    Analyze,
    /// Run every stage in order.
    All,
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();

    let Some(config_path) = &cli.config else {
        bail!("no configuration: pass --config <file>");
    };
    let overrides = Overrides { threads: cli.threads, out: cli.out.clone() };
    let cfg = PipelineConfig::load(config_path, &overrides)?;

    if cfg.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build_global()
            .context("cannot size the thread pool")?;
    }

    match cli.stage {
        Stage::Ingest => stages::run_ingest(&cfg),
        Stage::Prep => stages::run_prep(&cfg),
        Stage::Index => stages::run_index(&cfg),
        Stage::Score => stages::run_score(&cfg),
        Stage::Classify => stages::run_classify(&cfg),
        Stage::Aggregate => stages::run_aggregate(&cfg),
        Stage::Analyze => stages::run_analyze(&cfg),
        Stage::All => stages::run_all(&cfg),
    }
}
