//! Command-line front end: `synth`, `train`, `eval` and `analyze`.
//!
//! Exit codes: 0 success, 2 config error, 3 I/O error, 4 training
//! divergence, 5 input data error (malformed or empty corpus, missing or
//! unusable judgments), 6 analysis sample infeasible.

pub mod commands;
pub mod config;
pub mod error;
pub mod hash;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use config::{RunConfig, TrainOverrides};
pub use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "duallab", version, about = "Train and probe dual-encoder retrieval models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// JSON run config; omitted fields take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the seed of the subcommand's config section.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic train/test corpus with judgments.
    Synth {
        #[command(flatten)]
        common: Common,
    },
    /// Train a dual encoder on a JSON-lines pair corpus.
    Train {
        #[command(flatten)]
        common: Common,
        /// Training split (JSON lines).
        #[arg(long)]
        corpus: PathBuf,
        #[command(flatten)]
        overrides: TrainOverrides,
    },
    /// Rank a corpus's queries against its documents and score the rankings.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Checkpoint JSON written by `train`.
        checkpoint: PathBuf,
        /// Evaluation split (JSON lines).
        #[arg(long)]
        corpus: PathBuf,
        /// Relevance TSV; defaults to each record's own document.
        #[arg(long)]
        judgments: Option<PathBuf>,
    },
    /// Similarity histograms, t-SNE maps and tower alignment per checkpoint.
    Analyze {
        #[command(flatten)]
        common: Common,
        /// One or more checkpoints, analysed on a shared pair sample.
        #[arg(required = true)]
        checkpoints: Vec<PathBuf>,
        /// Split whose queries and gold documents are probed.
        #[arg(long)]
        corpus: PathBuf,
    },
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Synth { common } => {
            let report = commands::synth(RunConfig::load(common.config.as_deref())?, common.seed, &common.out)?;
            let text = serde_json::to_string_pretty(&report).map_err(|e| CliError::Io(e.to_string()))?;
            println!("{text}");
        }
        Command::Train { common, corpus, overrides } => {
            let cfg = RunConfig::load(common.config.as_deref())?;
            commands::train(cfg, common.seed, &overrides, &corpus, &common.out)?;
        }
        Command::Eval { common, checkpoint, corpus, judgments } => {
            // Evaluation draws no random numbers; --seed has no effect here.
            let cfg = RunConfig::load(common.config.as_deref())?;
            let r = commands::eval(cfg, &checkpoint, &corpus, judgments.as_deref(), &common.out)?;
            eprintln!("P@1 {:.4}  MRR {:.4}  NDCG@10 {:.4}", r.metrics.p_at_1, r.metrics.mrr, r.metrics.ndcg_at_10);
        }
        Command::Analyze { common, checkpoints, corpus } => {
            let cfg = RunConfig::load(common.config.as_deref())?;
            commands::analyze(cfg, common.seed, &checkpoints, &corpus, &common.out)?;
        }
    }
    Ok(())
}
