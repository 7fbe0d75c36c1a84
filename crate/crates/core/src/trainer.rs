//! Mini-batch training with in-batch negatives.

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::data::PairCorpus;
use crate::encoder::{tokenize, ModelParams, TokenSeq, Tower, TowerConfig};
use crate::error::{Error, Result};
use crate::losses::{duplicate_mask, objective_loss, similarity_matrices, LossConfig};
use crate::numerics::Rng;
use crate::scalar::Scalar;

/// `lr0 * (1 - step / total)`.
pub fn lr_schedule(step: usize, total: usize, lr0: f64) -> Result<f64> {
    if total == 0 || step > total {
        return Err(Error::param(format!("step {step} outside schedule of {total} steps")));
    }
    Ok(lr0 * (1.0 - step as f64 / total as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub optimizer: OptimizerKind,
    pub adam: AdamParams,
    pub loss: LossConfig,
    pub seed: u64,
    /// Emit an intermediate checkpoint every this many steps; 0 means only at the end.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 32,
            lr0: 1e-3,
            optimizer: OptimizerKind::Adam,
            adam: AdamParams::default(),
            loss: LossConfig::default(),
            seed: 0,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        if self.steps == 0 {
            return Err(Error::param("steps must be >= 1"));
        }
        if self.batch_size == 0 || (self.loss.needs_pairs() && self.batch_size < 2) {
            return Err(Error::param(format!(
                "batch_size {} too small for the {:?} objective",
                self.batch_size, self.loss.objective
            )));
        }
        if !(self.lr0 >= 0.0) || !self.lr0.is_finite() {
            return Err(Error::param("lr0 must be finite and >= 0"));
        }
        Ok(())
    }
}

/// One tokenized training pair.
#[derive(Debug, Clone)]
pub struct TrainPair {
    pub query: TokenSeq,
    pub doc: TokenSeq,
    pub doc_key: String,
}

pub fn tokenize_corpus(corpus: &PairCorpus, vocab_size: usize) -> Result<Vec<TrainPair>> {
    corpus
        .records()
        .iter()
        .enumerate()
        .map(|(n, r)| {
            let ctx = |e: Error| match e {
                Error::EmptyInput => Error::Schema { line: n + 1, detail: "text has no tokens".into() },
                other => other,
            };
            Ok(TrainPair {
                query: tokenize(&r.query, vocab_size).map_err(ctx)?,
                doc: tokenize(&r.doc, vocab_size).map_err(ctx)?,
                doc_key: r.doc_id.clone(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub queries: Vec<TokenSeq>,
    pub docs: Vec<TokenSeq>,
    pub doc_keys: Vec<String>,
    /// Corpus positions of the batch rows.
    pub members: Vec<usize>,
}

/// Endless stream of full batches: each epoch is a fresh seeded shuffle,
/// the remainder that does not fill a batch is dropped.
pub struct BatchStream<'a> {
    pairs: &'a [TrainPair],
    batch_size: usize,
    rng: Rng,
    order: Vec<usize>,
    cursor: usize,
}

pub fn make_batches(pairs: &[TrainPair], batch_size: usize, rng: Rng) -> Result<BatchStream<'_>> {
    if batch_size == 0 {
        return Err(Error::param("batch_size must be >= 1"));
    }
    if pairs.len() < batch_size {
        return Err(Error::data(format!("corpus of {} pairs is smaller than batch size {batch_size}", pairs.len())));
    }
    let mut s = BatchStream { pairs, batch_size, rng, order: (0..pairs.len()).collect(), cursor: 0 };
    s.reshuffle();
    Ok(s)
}

impl BatchStream<'_> {
    fn reshuffle(&mut self) {
        self.order.sort_unstable();
        self.rng.shuffle(&mut self.order);
        self.cursor = 0;
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.pairs.len() / self.batch_size
    }
}

impl Iterator for BatchStream<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        if self.cursor + self.batch_size > self.pairs.len() {
            self.reshuffle();
        }
        let members = self.order[self.cursor..self.cursor + self.batch_size].to_vec();
        self.cursor += self.batch_size;
        let pick = |f: fn(&TrainPair) -> TokenSeq| members.iter().map(|&i| f(&self.pairs[i])).collect();
        Some(Batch {
            queries: pick(|p| p.query.clone()),
            docs: pick(|p| p.doc.clone()),
            doc_keys: members.iter().map(|&i| self.pairs[i].doc_key.clone()).collect(),
            members,
        })
    }
}

/// SGD or Adam over all physical parameter tensors.
#[derive(Debug, Clone)]
pub struct Optimizer<T> {
    kind: OptimizerKind,
    adam: AdamParams,
    moments: Option<(ModelParams<T>, ModelParams<T>)>,
    t: i32,
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(kind: OptimizerKind, adam: AdamParams) -> Self {
        Self { kind, adam, moments: None, t: 0 }
    }

    pub fn step(&mut self, params: &mut ModelParams<T>, grads: &ModelParams<T>, lr: f64) -> Result<()> {
        let lr = T::of(lr);
        match self.kind {
            OptimizerKind::Sgd => params.axpy(-lr, grads),
            OptimizerKind::Adam => {
                self.t += 1;
                let (m, v) = self.moments.get_or_insert_with(|| (params.zeros_like(), params.zeros_like()));
                let b1 = T::of(self.adam.beta1);
                let b2 = T::of(self.adam.beta2);
                let eps = T::of(self.adam.eps);
                let c1 = T::one() - b1.powi(self.t);
                let c2 = T::one() - b2.powi(self.t);
                let tensors = params
                    .tensor_list_mut()
                    .into_iter()
                    .zip(grads.tensor_list())
                    .zip(m.tensor_list_mut().into_iter().zip(v.tensor_list_mut()));
                for ((p, g), (m, v)) in tensors {
                    let it = p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut().iter_mut().zip(v.data_mut()));
                    for ((p, &g), (m, v)) in it {
                        *m = b1 * *m + (T::one() - b1) * g;
                        *v = b2 * *v + (T::one() - b2) * g * g;
                        let mhat = *m / c1;
                        let vhat = *v / c2;
                        *p -= lr * mhat / (vhat.sqrt() + eps);
                    }
                }
                Ok(())
            }
        }
    }
}

/// Loss and parameter gradients for one batch, without updating anything.
pub fn batch_gradients<T: Scalar>(params: &ModelParams<T>, batch: &Batch, loss: &LossConfig) -> Result<(T, ModelParams<T>)> {
    let q = params.encode_batch(Tower::Query, &batch.queries)?;
    let p = params.encode_batch(Tower::Doc, &batch.docs)?;
    let mut sims = similarity_matrices(&q, &p)?;
    if loss.mask_duplicate_docs {
        sims = sims.with_duplicate_mask(duplicate_mask(&batch.doc_keys))?;
    }
    let res = objective_loss(&sims, loss)?;
    let mut grads = params.zeros_like();
    params.encode_backward_into(&mut grads, Tower::Query, &batch.queries, &res.grad_q)?;
    params.encode_backward_into(&mut grads, Tower::Doc, &batch.docs, &res.grad_p)?;
    Ok((res.loss, grads))
}

/// One optimizer update at `lr_schedule(step)`; returns the pre-update loss.
pub fn train_step<T: Scalar>(
    params: &mut ModelParams<T>,
    opt: &mut Optimizer<T>,
    batch: &Batch,
    cfg: &TrainConfig,
    step: usize,
) -> Result<T> {
    let lr = lr_schedule(step, cfg.steps, cfg.lr0)?;
    let diverged = |detail: String| Error::Divergence { step, detail };
    let (loss, grads) = batch_gradients(params, batch, &cfg.loss).map_err(|e| match e {
        Error::NonFinite(what) => diverged(format!("non-finite value in {what}")),
        Error::DegenerateEmbedding { row } => diverged(format!("zero-norm embedding at batch row {row}")),
        other => other,
    })?;
    if !loss.is_finite() {
        return Err(diverged(format!("loss is {loss}")));
    }
    if !grads.is_finite() {
        return Err(diverged("non-finite gradient".into()));
    }
    opt.step(params, &grads, lr)?;
    if !params.is_finite() {
        return Err(diverged("non-finite parameters after update".into()));
    }
    Ok(loss)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, Default)]
pub struct TrainLog {
    pub records: Vec<StepRecord>,
    pub wall_clock: Duration,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,lr,loss\n");
        for r in &self.records {
            let _ = writeln!(s, "{},{},{}", r.step, r.lr, r.loss);
        }
        s
    }

    /// Mean loss over the first and last `window` records.
    pub fn head_tail_means(&self, window: usize) -> Option<(f64, f64)> {
        let n = self.records.len();
        if n == 0 {
            return None;
        }
        let w = window.clamp(1, n);
        let mean = |rs: &[StepRecord]| rs.iter().map(|r| r.loss).sum::<f64>() / rs.len() as f64;
        Some((mean(&self.records[..w]), mean(&self.records[n - w..])))
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub params: ModelParams<T>,
    pub log: TrainLog,
}

/// RNG stream labels derived from the training seed.
pub const INIT_STREAM: u64 = 1;
pub const BATCH_STREAM: u64 = 2;

/// Runs `cfg.steps` updates. `on_checkpoint(params, completed_steps)` is
/// called every `checkpoint_every` steps and once after the final step.
pub fn train_with<T: Scalar>(
    model: TowerConfig,
    cfg: &TrainConfig,
    corpus: &PairCorpus,
    mut on_checkpoint: impl FnMut(&ModelParams<T>, usize) -> Result<()>,
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    model.validate()?;
    let started = Instant::now();
    let root = Rng::new(cfg.seed);
    let mut params = ModelParams::<T>::init(model, &mut root.split(INIT_STREAM))?;
    let pairs = tokenize_corpus(corpus, model.vocab_size)?;
    let mut batches = make_batches(&pairs, cfg.batch_size, root.split(BATCH_STREAM))?;
    let mut opt = Optimizer::new(cfg.optimizer, cfg.adam);
    let mut log = TrainLog::default();
    for step in 0..cfg.steps {
        let batch = batches.next().expect("batch stream is endless");
        let lr = lr_schedule(step, cfg.steps, cfg.lr0)?;
        let loss = train_step(&mut params, &mut opt, &batch, cfg, step)?;
        log.records.push(StepRecord { step, lr, loss: loss.to_f64_lossy() });
        let done = step + 1;
        if done == cfg.steps || (cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0) {
            on_checkpoint(&params, done)?;
        }
    }
    log.wall_clock = started.elapsed();
    Ok(TrainOutcome { params, log })
}

pub fn train<T: Scalar>(model: TowerConfig, cfg: &TrainConfig, corpus: &PairCorpus) -> Result<TrainOutcome<T>> {
    train_with(model, cfg, corpus, |_, _| Ok(()))
}
