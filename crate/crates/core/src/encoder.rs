//! Two-tower bag-of-tokens encoder.
//!
//! Text is hashed into token ids, token embeddings are mean-pooled, pushed
//! through a per-tower (or shared) linear projection and L2-normalized, so
//! the dot product of two encodings is their cosine similarity. The three
//! architectures differ only in which tensors alias:
//!
//! | architecture | embedding table | projection |
//! |--------------|-----------------|------------|
//! | `Sde`        | shared          | shared     |
//! | `Ade`        | per tower       | per tower  |
//! | `AdeSpl`     | per tower       | shared     |
//!
//! A shared tensor is stored once; the document-side slot is `None`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::numerics::{dot, norm, Matrix, Rng};
use crate::scalar::Scalar;

/// Hard cap on tokens per text; extra tokens are dropped.
pub const MAX_TOKENS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Architecture {
    #[serde(rename = "sde")]
    Sde,
    #[serde(rename = "ade")]
    Ade,
    #[serde(rename = "ade-spl")]
    AdeSpl,
}

impl Architecture {
    pub fn shares_embeddings(self) -> bool {
        matches!(self, Architecture::Sde)
    }

    pub fn shares_projection(self) -> bool {
        matches!(self, Architecture::Sde | Architecture::AdeSpl)
    }

    pub fn name(self) -> &'static str {
        match self {
            Architecture::Sde => "sde",
            Architecture::Ade => "ade",
            Architecture::AdeSpl => "ade-spl",
        }
    }
}

impl std::str::FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sde" => Ok(Architecture::Sde),
            "ade" => Ok(Architecture::Ade),
            "ade-spl" => Ok(Architecture::AdeSpl),
            other => Err(Error::param(format!("unknown architecture {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tower {
    Query,
    Doc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TowerConfig {
    pub architecture: Architecture,
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub out_dim: usize,
}

impl Default for TowerConfig {
    fn default() -> Self {
        Self { architecture: Architecture::AdeSpl, vocab_size: 4096, embed_dim: 32, out_dim: 32 }
    }
}

impl TowerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size == 0 || self.embed_dim == 0 || self.out_dim == 0 {
            return Err(Error::param(format!("tower dimensions must be >= 1: {self:?}")));
        }
        Ok(())
    }
}

/// Token ids of one text, all below the vocabulary size.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TokenSeq(Vec<usize>);

impl TokenSeq {
    pub fn new(ids: Vec<usize>, vocab_size: usize) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::EmptyInput);
        }
        if let Some(&bad) = ids.iter().find(|&&id| id >= vocab_size) {
            return Err(Error::param(format!("token id {bad} outside vocabulary of {vocab_size}")));
        }
        Ok(Self(ids))
    }

    pub fn ids(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// 64-bit FNV-1a over the UTF-8 bytes.
pub fn token_hash(token: &str) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    token.bytes().fold(OFFSET, |h, b| (h ^ u64::from(b)).wrapping_mul(PRIME))
}

/// Lowercase, split on whitespace, hash each token into `[0, vocab_size)`.
pub fn tokenize(text: &str, vocab_size: usize) -> Result<TokenSeq> {
    if vocab_size == 0 {
        return Err(Error::param("vocab_size must be >= 1"));
    }
    let ids: Vec<usize> = text
        .split_whitespace()
        .take(MAX_TOKENS)
        .map(|tok| (token_hash(&tok.to_lowercase()) % vocab_size as u64) as usize)
        .collect();
    TokenSeq::new(ids, vocab_size)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar + Serialize", deserialize = "T: Scalar + Deserialize<'de>"))]
pub struct Tensors<T> {
    pub query_embed: Matrix<T>,
    pub doc_embed: Option<Matrix<T>>,
    pub query_proj: Matrix<T>,
    pub doc_proj: Option<Matrix<T>>,
}

/// Trainable state of both towers. Also used as the gradient container,
/// so shared tensors accumulate contributions from both towers.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    config: TowerConfig,
    tensors: Tensors<T>,
}

pub type ParamGrads<T> = ModelParams<T>;

impl<T: Scalar> ModelParams<T> {
    /// Entries i.i.d. uniform on `[-1/sqrt(embed_dim), 1/sqrt(embed_dim)]`.
    pub fn init(config: TowerConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let bound = 1.0 / (config.embed_dim as f64).sqrt();
        let mut draw = |r, c| Matrix::from_fn(r, c, |_, _| T::of(rng.uniform_range(-bound, bound)));
        let query_embed = draw(config.vocab_size, config.embed_dim);
        let doc_embed = (!config.architecture.shares_embeddings())
            .then(|| draw(config.vocab_size, config.embed_dim));
        let query_proj = draw(config.embed_dim, config.out_dim);
        let doc_proj = (!config.architecture.shares_projection())
            .then(|| draw(config.embed_dim, config.out_dim));
        Ok(Self { config, tensors: Tensors { query_embed, doc_embed, query_proj, doc_proj } })
    }

    pub fn zeros(config: TowerConfig) -> Result<Self> {
        config.validate()?;
        let e = || Matrix::zeros(config.vocab_size, config.embed_dim);
        let p = || Matrix::zeros(config.embed_dim, config.out_dim);
        Ok(Self {
            config,
            tensors: Tensors {
                query_embed: e(),
                doc_embed: (!config.architecture.shares_embeddings()).then(e),
                query_proj: p(),
                doc_proj: (!config.architecture.shares_projection()).then(p),
            },
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.config).expect("config already validated")
    }

    pub fn from_tensors(config: TowerConfig, tensors: Tensors<T>) -> Result<Self> {
        config.validate()?;
        let arch = config.architecture;
        if tensors.doc_embed.is_some() == arch.shares_embeddings()
            || tensors.doc_proj.is_some() == arch.shares_projection()
        {
            return Err(Error::data(format!(
                "tensor aliasing does not match architecture {}",
                arch.name()
            )));
        }
        let embed_shape = (config.vocab_size, config.embed_dim);
        let proj_shape = (config.embed_dim, config.out_dim);
        let embeds = std::iter::once(&tensors.query_embed).chain(tensors.doc_embed.as_ref());
        let projs = std::iter::once(&tensors.query_proj).chain(tensors.doc_proj.as_ref());
        for m in embeds {
            if m.shape() != embed_shape {
                return Err(Error::shape("ModelParams", format!("embedding {:?} != {embed_shape:?}", m.shape())));
            }
        }
        for m in projs {
            if m.shape() != proj_shape {
                return Err(Error::shape("ModelParams", format!("projection {:?} != {proj_shape:?}", m.shape())));
            }
        }
        let params = Self { config, tensors };
        if !params.is_finite() {
            return Err(Error::NonFinite("ModelParams::from_tensors"));
        }
        Ok(params)
    }

    pub fn config(&self) -> &TowerConfig {
        &self.config
    }

    pub fn tensors(&self) -> &Tensors<T> {
        &self.tensors
    }

    pub fn embed(&self, tower: Tower) -> &Matrix<T> {
        match (tower, &self.tensors.doc_embed) {
            (Tower::Doc, Some(m)) => m,
            _ => &self.tensors.query_embed,
        }
    }

    pub fn embed_mut(&mut self, tower: Tower) -> &mut Matrix<T> {
        match (tower, &mut self.tensors.doc_embed) {
            (Tower::Doc, Some(m)) => m,
            _ => &mut self.tensors.query_embed,
        }
    }

    pub fn proj(&self, tower: Tower) -> &Matrix<T> {
        match (tower, &self.tensors.doc_proj) {
            (Tower::Doc, Some(m)) => m,
            _ => &self.tensors.query_proj,
        }
    }

    pub fn proj_mut(&mut self, tower: Tower) -> &mut Matrix<T> {
        match (tower, &mut self.tensors.doc_proj) {
            (Tower::Doc, Some(m)) => m,
            _ => &mut self.tensors.query_proj,
        }
    }

    /// True when the document tower reads the query tower's embedding table.
    pub fn embeddings_aliased(&self) -> bool {
        self.tensors.doc_embed.is_none()
    }

    pub fn projection_aliased(&self) -> bool {
        self.tensors.doc_proj.is_none()
    }

    /// Physical tensors in a fixed order: query embed, doc embed, query proj, doc proj.
    pub fn tensor_list(&self) -> Vec<&Matrix<T>> {
        let t = &self.tensors;
        let mut v = vec![&t.query_embed];
        v.extend(t.doc_embed.as_ref());
        v.push(&t.query_proj);
        v.extend(t.doc_proj.as_ref());
        v
    }

    pub fn tensor_list_mut(&mut self) -> Vec<&mut Matrix<T>> {
        let t = &mut self.tensors;
        let mut v = vec![&mut t.query_embed];
        v.extend(t.doc_embed.as_mut());
        v.push(&mut t.query_proj);
        v.extend(t.doc_proj.as_mut());
        v
    }

    pub fn num_parameters(&self) -> usize {
        self.tensor_list().iter().map(|m| m.data().len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensor_list().iter().all(|m| m.is_finite())
    }

    /// `self += alpha * other`, tensor by tensor.
    pub fn axpy(&mut self, alpha: T, other: &Self) -> Result<()> {
        if self.config != other.config {
            return Err(Error::shape("ModelParams::axpy", "configs differ"));
        }
        for (a, b) in self.tensor_list_mut().into_iter().zip(other.tensor_list()) {
            a.axpy(alpha, b)?;
        }
        Ok(())
    }

    fn check_tokens(&self, tokens: &TokenSeq) -> Result<()> {
        match tokens.ids().iter().find(|&&id| id >= self.config.vocab_size) {
            Some(bad) => Err(Error::param(format!(
                "token id {bad} outside vocabulary of {}",
                self.config.vocab_size
            ))),
            None => Ok(()),
        }
    }

    fn pooled(&self, tower: Tower, tokens: &TokenSeq) -> Vec<T> {
        let table = self.embed(tower);
        let mut acc = vec![T::zero(); self.config.embed_dim];
        for &id in tokens.ids() {
            for (a, &v) in acc.iter_mut().zip(table.row(id)) {
                *a += v;
            }
        }
        let n = T::of_usize(tokens.len());
        acc.iter_mut().for_each(|a| *a /= n);
        acc
    }

    fn project(&self, tower: Tower, pooled: &[T]) -> Vec<T> {
        let w = self.proj(tower);
        let mut h = vec![T::zero(); self.config.out_dim];
        for (k, &e) in pooled.iter().enumerate() {
            for (hj, &wkj) in h.iter_mut().zip(w.row(k)) {
                *hj += e * wkj;
            }
        }
        h
    }

    /// Unit-norm embedding of one token sequence.
    pub fn encode(&self, tower: Tower, tokens: &TokenSeq) -> Result<Vec<T>> {
        self.check_tokens(tokens)?;
        let mut h = self.project(tower, &self.pooled(tower, tokens));
        let n = norm(&h);
        if !(n > T::zero()) || !n.is_finite() {
            return Err(Error::DegenerateEmbedding { row: 0 });
        }
        h.iter_mut().for_each(|v| *v /= n);
        Ok(h)
    }

    pub fn encode_batch(&self, tower: Tower, seqs: &[TokenSeq]) -> Result<Matrix<T>> {
        if seqs.is_empty() {
            return Err(Error::param("encode_batch needs at least one sequence"));
        }
        let mut data = Vec::with_capacity(seqs.len() * self.config.out_dim);
        for (row, seq) in seqs.iter().enumerate() {
            let e = self.encode(tower, seq).map_err(|e| match e {
                Error::DegenerateEmbedding { .. } => Error::DegenerateEmbedding { row },
                other => other,
            })?;
            data.extend(e);
        }
        Matrix::new(seqs.len(), self.config.out_dim, data)
    }

    /// Gradient of `sum_ij grad[i][j] * encode_batch(tower, seqs)[i][j]`
    /// with respect to every parameter.
    pub fn encode_backward(&self, tower: Tower, seqs: &[TokenSeq], grad: &Matrix<T>) -> Result<ParamGrads<T>> {
        let mut grads = self.zeros_like();
        self.encode_backward_into(&mut grads, tower, seqs, grad)?;
        Ok(grads)
    }

    /// Accumulating form of [`encode_backward`](Self::encode_backward).
    pub fn encode_backward_into(
        &self,
        grads: &mut ParamGrads<T>,
        tower: Tower,
        seqs: &[TokenSeq],
        grad: &Matrix<T>,
    ) -> Result<()> {
        if grad.shape() != (seqs.len(), self.config.out_dim) {
            return Err(Error::shape(
                "encode_backward",
                format!("gradient {:?} for {} sequences of dim {}", grad.shape(), seqs.len(), self.config.out_dim),
            ));
        }
        if grads.config != self.config {
            return Err(Error::shape("encode_backward", "gradient container config differs"));
        }
        let w = self.proj(tower);
        for (row, seq) in seqs.iter().enumerate() {
            self.check_tokens(seq)?;
            let gy = grad.row(row);
            if gy.iter().all(|&g| g == T::zero()) {
                continue;
            }
            let e = self.pooled(tower, seq);
            let h = self.project(tower, &e);
            let n = norm(&h);
            if !(n > T::zero()) {
                return Err(Error::DegenerateEmbedding { row });
            }
            // y = h / |h|  =>  dh = (dy - y (y . dy)) / |h|
            let y: Vec<T> = h.iter().map(|&v| v / n).collect();
            let yg = dot(&y, gy);
            let gh: Vec<T> = y.iter().zip(gy).map(|(&yi, &gi)| (gi - yi * yg) / n).collect();

            let ge: Vec<T> = (0..self.config.embed_dim).map(|k| dot(w.row(k), &gh)).collect();
            let gw = grads.proj_mut(tower);
            for (k, &ek) in e.iter().enumerate() {
                for (g, &ghj) in gw.row_mut(k).iter_mut().zip(&gh) {
                    *g += ek * ghj;
                }
            }
            let inv_len = T::one() / T::of_usize(seq.len());
            let ge_table = grads.embed_mut(tower);
            for &id in seq.ids() {
                for (g, &v) in ge_table.row_mut(id).iter_mut().zip(&ge) {
                    *g += v * inv_len;
                }
            }
        }
        Ok(())
    }
}

/// On-disk model snapshot: `{config, matrices, seed, step}` as one JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar + Serialize", deserialize = "T: Scalar + Deserialize<'de>"))]
#[serde(deny_unknown_fields)]
pub struct Checkpoint<T> {
    pub config: TowerConfig,
    pub matrices: Tensors<T>,
    pub seed: u64,
    pub step: usize,
}

impl<T: Scalar + Serialize + for<'de> Deserialize<'de>> Checkpoint<T> {
    pub fn from_params(params: &ModelParams<T>, seed: u64, step: usize) -> Self {
        Self { config: params.config, matrices: params.tensors.clone(), seed, step }
    }

    pub fn into_params(self) -> Result<ModelParams<T>> {
        ModelParams::from_tensors(self.config, self.matrices)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_json()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let ck: Self = serde_json::from_str(&text)?;
        // Validate shapes and aliasing eagerly.
        ModelParams::from_tensors(ck.config, ck.matrices.clone())?;
        Ok(ck)
    }
}
