use std::path::{Path, PathBuf};

use duallab::data::{generate_synthetic, load_corpus, unique_document_rate, PairCorpus};
use duallab::diagnostics::tsne::MAX_POINTS;
use duallab::diagnostics::{
    inter_tower_alignment, projection_csv, projection_svg, qq_qd_ratio_histogram, top1_similarity_distribution,
    tsne, BinSpec, Summary,
};
use duallab::encoder::tokenize;
use duallab::fsutil::write_atomic;
use duallab::numerics::{Matrix, Rng};
use duallab::retrieval::{build_index, mrr, ndcg_at_10, precision_at_1, random_ranking_mrr, rank_queries, rankings_to_tsv, Judgments};
use duallab::trainer::train_with;
use duallab::{Checkpoint, Error, ModelParams, Objective, Tower, TowerConfig};
use serde::Serialize;

use crate::config::{RunConfig, TrainOverrides};
use crate::error::{self, CliError};
use crate::hash::FileDigest;

type CliResult<T> = Result<T, CliError>;

fn read(path: &Path) -> CliResult<Vec<u8>> {
    std::fs::read(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn write(path: &Path, bytes: &[u8]) -> CliResult<()> {
    write_atomic(path, bytes).map_err(error::write(path))
}

fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
    text.push('\n');
    write(path, text.as_bytes())
}

fn ensure_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))
}

/// Reads a corpus, returning it with its digest.
fn corpus_input(role: &str, path: &Path) -> CliResult<(PairCorpus, FileDigest)> {
    let bytes = read(path)?;
    let corpus = load_corpus(path).map_err(error::input(path))?;
    Ok((corpus, FileDigest::new(role, path, &bytes)))
}

fn checkpoint_input(path: &Path) -> CliResult<(ModelParams, usize, FileDigest)> {
    let bytes = read(path)?;
    let ckpt = Checkpoint::load(path).map_err(error::input(path))?;
    let step = ckpt.step;
    let params = ckpt.into_params().map_err(error::input(path))?;
    Ok((params, step, FileDigest::new("checkpoint", path, &bytes)))
}

#[derive(Debug, Serialize)]
struct SplitStats {
    records: usize,
    unique_documents: usize,
    unique_document_rate: f64,
}

impl SplitStats {
    fn of(c: &PairCorpus) -> Self {
        let rate = unique_document_rate(c);
        Self { records: c.len(), unique_documents: (rate * c.len() as f64).round() as usize, unique_document_rate: rate }
    }
}

#[derive(Debug, Serialize)]
pub struct SynthReport {
    config: RunConfig,
    outputs: Vec<FileDigest>,
    train: SplitStats,
    test: SplitStats,
    judged_queries: usize,
}

/// Writes train.jsonl, test.jsonl and judgments.tsv; returns the report
/// (printed on stdout by the binary).
pub fn synth(mut cfg: RunConfig, seed: Option<u64>, out: &Path) -> CliResult<SynthReport> {
    if let Some(s) = seed {
        cfg.data.seed = s;
    }
    cfg.validate()?;
    let corpus = generate_synthetic(&cfg.data).map_err(|e| CliError::Config(e.to_string()))?;
    ensure_dir(out)?;
    let mut outputs = Vec::new();
    for (role, name, bytes) in [
        ("train", "train.jsonl", corpus.train.to_jsonl()),
        ("test", "test.jsonl", corpus.test.to_jsonl()),
        ("judgments", "judgments.tsv", corpus.judgments.to_tsv()),
    ] {
        let path = out.join(name);
        write(&path, bytes.as_bytes())?;
        outputs.push(FileDigest::new(role, &path, bytes.as_bytes()));
    }
    Ok(SynthReport {
        train: SplitStats::of(&corpus.train),
        test: SplitStats::of(&corpus.test),
        judged_queries: corpus.judgments.num_queries(),
        config: cfg,
        outputs,
    })
}

#[derive(Debug, Serialize)]
struct LossSummary {
    initial: f64,
    final_step: f64,
    /// Means over the first and last `window` steps.
    window: usize,
    head_mean: f64,
    tail_mean: f64,
}

#[derive(Debug, Serialize)]
pub struct TrainReport {
    config: RunConfig,
    inputs: Vec<FileDigest>,
    num_parameters: usize,
    /// How the objective is trained; PAIR runs here as a single stage.
    schedule: String,
    loss: LossSummary,
    checkpoints: Vec<FileDigest>,
}

pub fn checkpoint_name(step: usize) -> String {
    format!("checkpoint_step{step:06}.json")
}

pub fn train(
    mut cfg: RunConfig,
    seed: Option<u64>,
    overrides: &TrainOverrides,
    corpus_path: &Path,
    out: &Path,
) -> CliResult<TrainReport> {
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    overrides.apply(&mut cfg);
    cfg.validate()?;
    let (corpus, digest) = corpus_input("corpus", corpus_path)?;
    ensure_dir(out)?;
    let mut checkpoints = Vec::new();
    let outcome = train_with::<f64>(cfg.model, &cfg.train, &corpus, |params, done| {
        let json = Checkpoint::from_params(params, cfg.train.seed, done).to_json()?;
        let path = out.join(checkpoint_name(done));
        write_atomic(&path, json.as_bytes())?;
        checkpoints.push(FileDigest::new("checkpoint", &path, json.as_bytes()));
        if done == cfg.train.steps {
            write_atomic(&out.join("checkpoint.json"), json.as_bytes())?;
        }
        Ok(())
    })
    .map_err(|e| match e {
        Error::Divergence { .. } => CliError::Divergence(e.to_string()),
        Error::Io(io) => CliError::Io(io.to_string()),
        other => error::input(corpus_path)(other),
    })?;
    eprintln!("trained {} steps in {:.2?}", cfg.train.steps, outcome.log.wall_clock);
    write(&out.join("train_log.csv"), outcome.log.to_csv().as_bytes())?;

    let records = &outcome.log.records;
    let window = (records.len() / 10).clamp(1, 100);
    let (head_mean, tail_mean) = outcome.log.head_tail_means(window).expect("steps >= 1");
    let schedule = match cfg.train.loss.objective {
        Objective::Pair => "single-stage: PAIR objective from initialization, no separate pre-training stage",
        _ => "single-stage",
    };
    let report = TrainReport {
        inputs: vec![digest],
        num_parameters: outcome.params.num_parameters(),
        schedule: schedule.to_string(),
        loss: LossSummary {
            initial: records[0].loss,
            final_step: records[records.len() - 1].loss,
            window,
            head_mean,
            tail_mean,
        },
        checkpoints,
        config: cfg,
    };
    write_json(&out.join("train_report.json"), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Metrics {
    pub p_at_1: f64,
    pub mrr: f64,
    pub ndcg_at_10: f64,
}

#[derive(Debug, Serialize)]
pub struct EvalReport {
    config: RunConfig,
    inputs: Vec<FileDigest>,
    model: TowerConfig,
    checkpoint_step: usize,
    pub metrics: Metrics,
    /// Expected MRR of a uniformly random ranking over the same candidates.
    pub random_mrr: f64,
    pub num_queries: usize,
    pub num_candidates: usize,
}

pub fn eval(
    cfg: RunConfig,
    checkpoint: &Path,
    corpus_path: &Path,
    judgments_path: Option<&Path>,
    out: &Path,
) -> CliResult<EvalReport> {
    cfg.validate()?;
    let (params, step, ckpt_digest) = checkpoint_input(checkpoint)?;
    let (corpus, corpus_digest) = corpus_input("corpus", corpus_path)?;
    let mut inputs = vec![ckpt_digest, corpus_digest];
    let judgments = match judgments_path {
        Some(p) => {
            let bytes = std::fs::read(p).map_err(|e| CliError::Data(format!("judgments {}: {e}", p.display())))?;
            let text = String::from_utf8(bytes.clone()).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?;
            inputs.push(FileDigest::new("judgments", p, &bytes));
            Judgments::from_tsv(&text).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?
        }
        None => corpus.gold_judgments(),
    };
    let docs = corpus.unique_documents().map_err(error::input(corpus_path))?;
    let index = build_index(&params, &docs).map_err(error::input(corpus_path))?;
    let queries = corpus.queries();
    let rankings = rank_queries(&params, &queries, &index, index.len()).map_err(error::data)?;
    let metrics = Metrics {
        p_at_1: precision_at_1(&rankings, &judgments).map_err(error::data)?,
        mrr: mrr(&rankings, &judgments, cfg.eval.mrr_cutoff).map_err(error::data)?,
        ndcg_at_10: ndcg_at_10(&rankings, &judgments).map_err(error::data)?,
    };
    let qids: Vec<String> = queries.iter().map(|(id, _)| id.clone()).collect();
    let random_mrr = random_ranking_mrr(index.len(), &judgments, &qids).map_err(error::data)?;

    ensure_dir(out)?;
    let k = cfg.eval.top_k.min(index.len());
    let truncated: Vec<_> = rankings
        .into_iter()
        .map(|mut r| {
            r.hits.truncate(k);
            r
        })
        .collect();
    write(&out.join("rankings.tsv"), rankings_to_tsv(&truncated).as_bytes())?;
    let report = EvalReport {
        model: *params.config(),
        checkpoint_step: step,
        metrics,
        random_mrr,
        num_queries: queries.len(),
        num_candidates: index.len(),
        inputs,
        config: cfg,
    };
    write_json(&out.join("eval_report.json"), &report)?;
    Ok(report)
}

#[derive(Debug, Serialize)]
pub struct CheckpointAnalysis {
    pub label: String,
    pub checkpoint: FileDigest,
    pub step: usize,
    pub top1: Summary,
    pub ratio: Summary,
    /// Pair draws rejected for a near-zero query-document similarity.
    pub ratio_resampled: usize,
    pub alignment: f64,
    pub tsne_kl: f64,
    pub tsne_kl_after_exaggeration: Option<f64>,
    pub tsne_unconverged_rows: usize,
    pub artifacts: Vec<String>,
}

#[derive(Debug, Serialize)]
pub struct AnalyzeReport {
    config: RunConfig,
    inputs: Vec<FileDigest>,
    /// Seed of the shared (i, j) pair sample.
    pub pair_seed: u64,
    pub checkpoints: Vec<CheckpointAnalysis>,
}

fn embed_rows(params: &ModelParams, tower: Tower, texts: &[&str]) -> CliResult<Matrix<f64>> {
    let vocab = params.config().vocab_size;
    let seqs = texts.iter().map(|t| tokenize(t, vocab)).collect::<duallab::Result<Vec<_>>>().map_err(error::data)?;
    params.encode_batch(tower, &seqs).map_err(error::data)
}

fn check_feasible(cfg: &RunConfig, corpus: &PairCorpus) -> CliResult<()> {
    let a = &cfg.analyze;
    let n = corpus.len();
    if n < 2 {
        return Err(CliError::Infeasible(format!("ratio sampling needs at least 2 pairs, corpus has {n}")));
    }
    if a.projection_queries < 2 || a.projection_queries > n {
        return Err(CliError::Infeasible(format!(
            "projection_queries = {} must lie in 2..={n} (corpus size)",
            a.projection_queries
        )));
    }
    let points = 2 * a.projection_queries;
    if points > MAX_POINTS {
        return Err(CliError::Infeasible(format!("{points} t-SNE points exceed the exact-solver cap of {MAX_POINTS}")));
    }
    a.tsne.validate(points).map_err(|e| CliError::Infeasible(e.to_string()))
}

/// Per checkpoint: top-1 histogram, ratio histogram, t-SNE CSV and SVG.
pub fn analyze(mut cfg: RunConfig, seed: Option<u64>, checkpoints: &[PathBuf], corpus_path: &Path, out: &Path) -> CliResult<AnalyzeReport> {
    if let Some(s) = seed {
        cfg.analyze.seed = s;
        cfg.analyze.tsne.seed = s;
    }
    cfg.validate()?;
    if checkpoints.is_empty() {
        return Err(CliError::Config("analyze needs at least one checkpoint".into()));
    }
    let (corpus, corpus_digest) = corpus_input("corpus", corpus_path)?;
    check_feasible(&cfg, &corpus)?;
    let a = cfg.analyze;
    let records = corpus.records();
    let query_texts: Vec<&str> = records.iter().map(|r| r.query.as_str()).collect();
    let doc_texts: Vec<&str> = records.iter().map(|r| r.doc.as_str()).collect();
    let docs = corpus.unique_documents().map_err(error::input(corpus_path))?;
    let n_proj = a.projection_queries;
    let labels: Vec<Tower> = (0..2 * n_proj).map(|i| if i < n_proj { Tower::Query } else { Tower::Doc }).collect();

    let mut loaded = Vec::with_capacity(checkpoints.len());
    for path in checkpoints {
        loaded.push(checkpoint_input(path)?);
    }
    ensure_dir(out)?;
    let infeasible = |e: Error| match e {
        Error::DegenerateGeometry(msg) => CliError::Infeasible(msg),
        other => error::data(other),
    };
    let mut results = Vec::new();
    for (i, (params, step, digest)) in loaded.into_iter().enumerate() {
        let label = format!("ckpt{i}");
        let q = embed_rows(&params, Tower::Query, &query_texts)?;
        let p = embed_rows(&params, Tower::Doc, &doc_texts)?;
        let index = build_index(&params, &docs).map_err(error::data)?;
        let top1 = top1_similarity_distribution(&q, &index, BinSpec::cosine(a.top1_bins)).map_err(error::data)?;
        // Same seed for every checkpoint: identical (i, j) draws.
        let mut pair_rng = Rng::new(a.seed);
        let ratio = qq_qd_ratio_histogram(&q, &p, a.ratio_samples, &mut pair_rng, a.ratio_bins).map_err(infeasible)?;

        let mut x = Matrix::zeros(2 * n_proj, q.cols());
        for r in 0..n_proj {
            x.row_mut(r).copy_from_slice(q.row(r));
            x.row_mut(n_proj + r).copy_from_slice(p.row(r));
        }
        let proj = tsne(&x, &labels, &a.tsne).map_err(infeasible)?;
        let alignment = inter_tower_alignment(&proj).map_err(error::data)?;

        let title = format!("{label} ({}, step {step})", digest.file);
        let artifacts = [
            (format!("{label}_top1_hist.csv"), top1.histogram.to_csv()),
            (format!("{label}_ratio_hist.csv"), ratio.distribution.histogram.to_csv()),
            (format!("{label}_tsne.csv"), projection_csv(&proj)),
            (format!("{label}_tsne.svg"), projection_svg(&proj, &title)),
        ];
        for (name, body) in &artifacts {
            write(&out.join(name), body.as_bytes())?;
        }
        results.push(CheckpointAnalysis {
            label,
            checkpoint: digest,
            step,
            top1: top1.summary,
            ratio: ratio.distribution.summary,
            ratio_resampled: ratio.resampled,
            alignment,
            tsne_kl: proj.kl,
            tsne_kl_after_exaggeration: proj.kl_after_exaggeration,
            tsne_unconverged_rows: proj.unconverged_rows.len(),
            artifacts: artifacts.into_iter().map(|(n, _)| n).collect(),
        });
    }
    let report = AnalyzeReport { pair_seed: a.seed, checkpoints: results, inputs: vec![corpus_digest], config: cfg };
    write_json(&out.join("analyze_report.json"), &report)?;
    Ok(report)
}
