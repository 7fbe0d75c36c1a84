use std::path::Path;

use duallab::data::SynthConfig;
use duallab::diagnostics::{BinSpec, TsneConfig};
use duallab::{Architecture, LossConfig, Objective, SamToNeMode, TowerConfig, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Hits per query written to rankings.tsv; metrics always use the full ranking.
    pub top_k: usize,
    /// Optional MRR cutoff; `None` scores the full ranking.
    pub mrr_cutoff: Option<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { top_k: 100, mrr_cutoff: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalyzeConfig {
    /// Seeds the (i, j) pair sample shared by every checkpoint.
    pub seed: u64,
    pub ratio_samples: usize,
    pub ratio_bins: BinSpec,
    pub top1_bins: usize,
    /// Queries (plus their gold documents) placed in the t-SNE map.
    pub projection_queries: usize,
    pub tsne: TsneConfig,
}

impl Default for AnalyzeConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            ratio_samples: 10_000,
            ratio_bins: BinSpec { lo: -2.0, hi: 3.0, bins: 50 },
            top1_bins: 40,
            projection_queries: 100,
            tsne: TsneConfig::default(),
        }
    }
}

/// One JSON document configuring every subcommand; all fields optional.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: SynthConfig,
    pub model: TowerConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub analyze: AnalyzeConfig,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let cfg = |e: duallab::Error| CliError::Config(e.to_string());
        self.data.validate().map_err(cfg)?;
        self.model.validate().map_err(cfg)?;
        self.train.validate().map_err(cfg)?;
        if self.eval.top_k == 0 {
            return Err(CliError::Config("eval.top_k must be >= 1".into()));
        }
        if self.eval.mrr_cutoff == Some(0) {
            return Err(CliError::Config("eval.mrr_cutoff must be >= 1".into()));
        }
        let a = &self.analyze;
        if a.ratio_samples == 0 || a.top1_bins < 2 || a.ratio_bins.bins == 0 || a.ratio_bins.lo.partial_cmp(&a.ratio_bins.hi) != Some(std::cmp::Ordering::Less) {
            return Err(CliError::Config("analyze: sample count and bin specs must be positive".into()));
        }
        Ok(())
    }
}

/// `--loss` values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum LossChoice {
    Standard,
    /// Query-side same-tower negatives.
    Samtone,
    /// Same-tower negatives on both sides.
    SamtoneBi,
    Pair,
}

impl LossChoice {
    pub fn apply(self, loss: &mut LossConfig) {
        let (objective, mode) = match self {
            LossChoice::Standard => (Objective::Standard, SamToNeMode::Off),
            LossChoice::Samtone => (Objective::SamToNe, SamToNeMode::QuerySide),
            LossChoice::SamtoneBi => (Objective::SamToNe, SamToNeMode::Bidirectional),
            LossChoice::Pair => (Objective::Pair, SamToNeMode::Off),
        };
        loss.objective = objective;
        loss.samtone_mode = mode;
    }
}

/// Training flags; each set flag overrides the config file.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct TrainOverrides {
    /// Encoder architecture: sde, ade or ade-spl.
    #[arg(long, value_parser = parse_arch)]
    pub arch: Option<Architecture>,
    #[arg(long, value_enum)]
    pub loss: Option<LossChoice>,
    /// Number of optimizer steps.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Batch size (pairs per step).
    #[arg(long)]
    pub batch: Option<usize>,
    /// Softmax temperature.
    #[arg(long)]
    pub tau: Option<f64>,
    /// PAIR mixing weight.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Drop same-tower terms between identical documents.
    #[arg(long)]
    pub mask_dups: bool,
}

fn parse_arch(s: &str) -> Result<Architecture, String> {
    s.parse().map_err(|e: duallab::Error| e.to_string())
}

impl TrainOverrides {
    pub fn apply(&self, cfg: &mut RunConfig) {
        if let Some(a) = self.arch {
            cfg.model.architecture = a;
        }
        if let Some(l) = self.loss {
            l.apply(&mut cfg.train.loss);
        }
        if let Some(s) = self.steps {
            cfg.train.steps = s;
        }
        if let Some(b) = self.batch {
            cfg.train.batch_size = b;
        }
        if let Some(t) = self.tau {
            cfg.train.loss.temperature = t;
        }
        if let Some(a) = self.alpha {
            cfg.train.loss.pair_alpha = a;
        }
        if self.mask_dups {
            cfg.train.loss.mask_duplicate_docs = true;
        }
    }
}
