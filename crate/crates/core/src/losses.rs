//! Contrastive objectives over in-batch similarity matrices.
//!
//! Every loss is the batch mean of `-log` of a softmax-style fraction with
//! temperature `tau`, evaluated with log-sum-exp. Gradients are taken with
//! respect to the unit-norm tower embeddings `Q` and `P` (treated as free
//! variables); chaining into encoder parameters happens in `encoder`.
//!
//! * standard: row `i` of `qp` against all of row `i`.
//! * bidirectional: mean of the row-wise (query to document) and
//!   column-wise (document to query) standard losses.
//! * SamToNe: the query-to-document denominator additionally contains
//!   `exp(qq_ij / tau)` for `j != i`; in bidirectional mode the
//!   document-to-query denominator contains `exp(pp_ij / tau)` for `j != i`.
//! * PAIR: `(1 - alpha) * base + alpha * mean_i[-qp_ii/tau + lse_{j != i}(pp_ij/tau)]`.
//!
//! With duplicate masking on, `pp_ij` terms where documents `i` and `j`
//! share an identity key are dropped from every same-tower sum.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{log_sum_exp, Matrix};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamToNeMode {
    Off,
    QuerySide,
    Bidirectional,
}

/// Which objective the trainer optimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    Standard,
    #[serde(rename = "samtone")]
    SamToNe,
    Pair,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub objective: Objective,
    pub temperature: f64,
    pub pair_alpha: f64,
    pub samtone_mode: SamToNeMode,
    /// Add the document-to-query direction to the base loss.
    pub bidirectional_base: bool,
    pub mask_duplicate_docs: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            objective: Objective::Standard,
            temperature: 0.01,
            pair_alpha: 0.1,
            samtone_mode: SamToNeMode::Off,
            bidirectional_base: true,
            mask_duplicate_docs: false,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(Error::param(format!("temperature must be > 0, got {}", self.temperature)));
        }
        if !(0.0..=1.0).contains(&self.pair_alpha) {
            return Err(Error::param(format!("pair_alpha must lie in [0, 1], got {}", self.pair_alpha)));
        }
        Ok(())
    }

    /// True when the objective has same-tower terms that need `B >= 2`.
    pub fn needs_pairs(&self) -> bool {
        match self.objective {
            Objective::Standard => false,
            Objective::SamToNe => self.samtone_mode != SamToNeMode::Off,
            Objective::Pair => self.pair_alpha > 0.0,
        }
    }
}

/// In-batch similarity matrices plus the embeddings they were built from.
#[derive(Debug, Clone)]
pub struct SimMatrices<T> {
    pub qp: Matrix<T>,
    pub qq: Matrix<T>,
    pub pp: Matrix<T>,
    q: Matrix<T>,
    p: Matrix<T>,
    dup_mask: Option<Vec<bool>>,
}

impl<T: Scalar> SimMatrices<T> {
    pub fn batch_size(&self) -> usize {
        self.qp.rows()
    }

    pub fn queries(&self) -> &Matrix<T> {
        &self.q
    }

    pub fn docs(&self) -> &Matrix<T> {
        &self.p
    }

    /// Attach a `B x B` duplicate mask (see [`duplicate_mask`]).
    pub fn with_duplicate_mask(mut self, mask: Vec<bool>) -> Result<Self> {
        let b = self.batch_size();
        if mask.len() != b * b {
            return Err(Error::shape("with_duplicate_mask", format!("mask of {} for batch {b}", mask.len())));
        }
        self.dup_mask = Some(mask);
        Ok(self)
    }

    /// Copy with every similarity multiplied by `s`; the embeddings are kept.
    pub fn scaled(&self, s: T) -> Self {
        Self {
            qp: self.qp.scale(s),
            qq: self.qq.scale(s),
            pp: self.pp.scale(s),
            q: self.q.clone(),
            p: self.p.clone(),
            dup_mask: self.dup_mask.clone(),
        }
    }

    fn masked(&self, i: usize, j: usize, cfg: &LossConfig) -> bool {
        cfg.mask_duplicate_docs
            && self.dup_mask.as_ref().is_some_and(|m| m[i * self.batch_size() + j])
    }
}

/// `qp = Q Pᵀ`, `qq = Q Qᵀ`, `pp = P Pᵀ`.
pub fn similarity_matrices<T: Scalar>(q: &Matrix<T>, p: &Matrix<T>) -> Result<SimMatrices<T>> {
    if q.shape() != p.shape() {
        return Err(Error::shape("similarity_matrices", format!("Q {:?} vs P {:?}", q.shape(), p.shape())));
    }
    if q.rows() == 0 {
        return Err(Error::shape("similarity_matrices", "empty batch"));
    }
    Ok(SimMatrices {
        qp: q.matmul_t(p)?,
        qq: q.matmul_t(q)?,
        pp: p.matmul_t(p)?,
        q: q.clone(),
        p: p.clone(),
        dup_mask: None,
    })
}

/// `mask[i*B + j]` is true iff `i != j` and the two documents share a key.
pub fn duplicate_mask<K: PartialEq>(doc_keys: &[K]) -> Vec<bool> {
    let b = doc_keys.len();
    let mut mask = vec![false; b * b];
    for i in 0..b {
        for j in 0..b {
            mask[i * b + j] = i != j && doc_keys[i] == doc_keys[j];
        }
    }
    mask
}

#[derive(Debug, Clone)]
pub struct LossResult<T> {
    pub loss: T,
    pub grad_q: Matrix<T>,
    pub grad_p: Matrix<T>,
}

#[derive(Clone, Copy)]
enum Sim {
    Qp,
    Qq,
    Pp,
}

/// Loss accumulator with gradients with respect to the three similarity matrices.
struct Accum<T> {
    tau: T,
    loss: T,
    g_qp: Matrix<T>,
    g_qq: Matrix<T>,
    g_pp: Matrix<T>,
}

impl<T: Scalar> Accum<T> {
    fn new(b: usize, tau: T) -> Self {
        Self { tau, loss: T::zero(), g_qp: Matrix::zeros(b, b), g_qq: Matrix::zeros(b, b), g_pp: Matrix::zeros(b, b) }
    }

    fn grad_mut(&mut self, which: Sim) -> &mut Matrix<T> {
        match which {
            Sim::Qp => &mut self.g_qp,
            Sim::Qq => &mut self.g_qq,
            Sim::Pp => &mut self.g_pp,
        }
    }

    /// Adds `weight * (-num/tau + lse(denom/tau))`.
    fn term(&mut self, s: &SimMatrices<T>, num: (Sim, usize, usize), denom: &[(Sim, usize, usize)], weight: T) -> Result<()> {
        if denom.is_empty() {
            return Err(Error::param("softmax denominator has no terms"));
        }
        let value = |(w, i, j): (Sim, usize, usize)| match w {
            Sim::Qp => s.qp[(i, j)],
            Sim::Qq => s.qq[(i, j)],
            Sim::Pp => s.pp[(i, j)],
        };
        let tau = self.tau;
        let logits: Vec<T> = denom.iter().map(|&e| value(e) / tau).collect();
        let lse = log_sum_exp(&logits);
        self.loss += weight * (lse - value(num) / tau);
        let (w, i, j) = num;
        self.grad_mut(w)[(i, j)] -= weight / tau;
        for (&(w, i, j), &l) in denom.iter().zip(&logits) {
            self.grad_mut(w)[(i, j)] += weight * (l - lse).exp() / tau;
        }
        Ok(())
    }

    /// Chain the similarity gradients into the embeddings.
    fn finish(self, s: &SimMatrices<T>) -> Result<LossResult<T>> {
        let (q, p) = (&s.q, &s.p);
        // qp = Q Pᵀ:  dQ += G P,  dP += Gᵀ Q.   qq = Q Qᵀ:  dQ += (G + Gᵀ) Q.
        let mut grad_q = self.g_qp.matmul(p)?;
        grad_q.axpy(T::one(), &self.g_qq.add(&self.g_qq.transpose())?.matmul(q)?)?;
        let mut grad_p = self.g_qp.transpose().matmul(q)?;
        grad_p.axpy(T::one(), &self.g_pp.add(&self.g_pp.transpose())?.matmul(p)?)?;
        if !self.loss.is_finite() || !grad_q.is_finite() || !grad_p.is_finite() {
            return Err(Error::NonFinite("loss evaluation"));
        }
        Ok(LossResult { loss: self.loss, grad_q, grad_p })
    }
}

/// Which same-tower terms one direction adds to its denominator.
#[derive(Clone, Copy, PartialEq)]
enum Extra {
    None,
    SameTower,
}

fn query_to_doc<T: Scalar>(acc: &mut Accum<T>, s: &SimMatrices<T>, extra: Extra, weight: T) -> Result<()> {
    let b = s.batch_size();
    let mut denom = Vec::with_capacity(2 * b);
    for i in 0..b {
        denom.clear();
        denom.extend((0..b).map(|j| (Sim::Qp, i, j)));
        if extra == Extra::SameTower {
            denom.extend((0..b).filter(|&j| j != i).map(|j| (Sim::Qq, i, j)));
        }
        acc.term(s, (Sim::Qp, i, i), &denom, weight)?;
    }
    Ok(())
}

fn doc_to_query<T: Scalar>(acc: &mut Accum<T>, s: &SimMatrices<T>, extra: Extra, cfg: &LossConfig, weight: T) -> Result<()> {
    let b = s.batch_size();
    let mut denom = Vec::with_capacity(2 * b);
    for i in 0..b {
        denom.clear();
        denom.extend((0..b).map(|j| (Sim::Qp, j, i)));
        if extra == Extra::SameTower {
            denom.extend((0..b).filter(|&j| j != i && !s.masked(i, j, cfg)).map(|j| (Sim::Pp, i, j)));
        }
        acc.term(s, (Sim::Qp, i, i), &denom, weight)?;
    }
    Ok(())
}

fn tau_of<T: Scalar>(cfg: &LossConfig) -> Result<T> {
    cfg.validate()?;
    Ok(T::of(cfg.temperature))
}

/// Standard in-batch softmax loss, query to document.
pub fn contrastive_loss<T: Scalar>(s: &SimMatrices<T>, cfg: &LossConfig) -> Result<LossResult<T>> {
    let b = s.batch_size();
    let mut acc = Accum::new(b, tau_of(cfg)?);
    query_to_doc(&mut acc, s, Extra::None, T::one() / T::of_usize(b))?;
    acc.finish(s)
}

/// Mean of the query-to-document and document-to-query standard losses.
pub fn bidirectional_loss<T: Scalar>(s: &SimMatrices<T>, cfg: &LossConfig) -> Result<LossResult<T>> {
    let b = s.batch_size();
    let mut acc = Accum::new(b, tau_of(cfg)?);
    let w = T::one() / T::of_usize(2 * b);
    query_to_doc(&mut acc, s, Extra::None, w)?;
    doc_to_query(&mut acc, s, Extra::None, cfg, w)?;
    acc.finish(s)
}

/// Standard or bidirectional base loss, per `cfg.bidirectional_base`.
pub fn base_loss<T: Scalar>(s: &SimMatrices<T>, cfg: &LossConfig) -> Result<LossResult<T>> {
    if cfg.bidirectional_base {
        bidirectional_loss(s, cfg)
    } else {
        contrastive_loss(s, cfg)
    }
}

/// Same-tower negatives.
///
/// The document-to-query direction is present when `bidirectional_base` is
/// set or the mode is `Bidirectional`; only the latter adds `pp` terms.
/// With mode `Off` this reduces to [`base_loss`].
pub fn samtone_loss<T: Scalar>(s: &SimMatrices<T>, cfg: &LossConfig) -> Result<LossResult<T>> {
    let b = s.batch_size();
    let mut acc = Accum::new(b, tau_of(cfg)?);
    let q_extra = if cfg.samtone_mode == SamToNeMode::Off { Extra::None } else { Extra::SameTower };
    let both = cfg.bidirectional_base || cfg.samtone_mode == SamToNeMode::Bidirectional;
    let w = T::one() / T::of_usize(if both { 2 * b } else { b });
    query_to_doc(&mut acc, s, q_extra, w)?;
    if both {
        let p_extra = if cfg.samtone_mode == SamToNeMode::Bidirectional { Extra::SameTower } else { Extra::None };
        doc_to_query(&mut acc, s, p_extra, cfg, w)?;
    }
    acc.finish(s)
}

/// PAIR hybrid: `(1 - alpha) * base - alpha * mean_i log L_P`.
///
/// `L_P`'s denominator holds only `exp(pp_ij / tau)` for `j != i`, so it
/// needs `B >= 2` when `alpha > 0`, and its `-log` can be negative.
pub fn pair_loss<T: Scalar>(s: &SimMatrices<T>, cfg: &LossConfig) -> Result<LossResult<T>> {
    let tau: T = tau_of(cfg)?;
    let alpha = cfg.pair_alpha;
    if alpha == 0.0 {
        return base_loss(s, cfg);
    }
    let b = s.batch_size();
    if b < 2 {
        return Err(Error::param("PAIR passage term is undefined for a batch of one"));
    }
    let alpha = T::of(alpha);
    let mut acc = Accum::new(b, tau);
    let keep = T::one() - alpha;
    if cfg.bidirectional_base {
        let w = keep / T::of_usize(2 * b);
        query_to_doc(&mut acc, s, Extra::None, w)?;
        doc_to_query(&mut acc, s, Extra::None, cfg, w)?;
    } else {
        query_to_doc(&mut acc, s, Extra::None, keep / T::of_usize(b))?;
    }
    let w = alpha / T::of_usize(b);
    let mut denom = Vec::with_capacity(b);
    for i in 0..b {
        denom.clear();
        denom.extend((0..b).filter(|&j| j != i && !s.masked(i, j, cfg)).map(|j| (Sim::Pp, i, j)));
        if denom.is_empty() {
            return Err(Error::param(format!("PAIR passage term for row {i} has every negative masked")));
        }
        acc.term(s, (Sim::Qp, i, i), &denom, w)?;
    }
    acc.finish(s)
}

/// Dispatch on `cfg.objective`.
pub fn objective_loss<T: Scalar>(s: &SimMatrices<T>, cfg: &LossConfig) -> Result<LossResult<T>> {
    match cfg.objective {
        Objective::Standard => base_loss(s, cfg),
        Objective::SamToNe => samtone_loss(s, cfg),
        Objective::Pair => pair_loss(s, cfg),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    fn uni() -> LossConfig {
        LossConfig { bidirectional_base: false, ..LossConfig::default() }
    }

    fn unit_rows(rng: &mut Rng, b: usize, d: usize) -> Matrix<f64> {
        Matrix::from_fn(b, d, |_, _| rng.normal()).l2_normalize_rows().unwrap()
    }

    /// Similarity matrices filled with one constant, embeddings irrelevant.
    fn constant_sims(b: usize, v: f64) -> SimMatrices<f64> {
        let e = Matrix::from_fn(b, 1, |_, _| 1.0);
        let mut s = similarity_matrices(&e, &e).unwrap();
        s.qp = Matrix::from_fn(b, b, |_, _| v);
        s.qq = s.qp.clone();
        s.pp = s.qp.clone();
        s
    }

    #[test]
    fn batch_of_one_is_zero() {
        let mut rng = Rng::new(0);
        let q = unit_rows(&mut rng, 1, 4);
        let p = unit_rows(&mut rng, 1, 4);
        let s = similarity_matrices(&q, &p).unwrap();
        assert_eq!(contrastive_loss(&s, &uni()).unwrap().loss, 0.0);
        assert_eq!(bidirectional_loss(&s, &uni()).unwrap().loss, 0.0);
        let st = LossConfig { samtone_mode: SamToNeMode::Bidirectional, ..uni() };
        assert_eq!(samtone_loss(&s, &st).unwrap().loss, 0.0);
    }

    #[test]
    fn uniform_b4_is_ln4() {
        let l = contrastive_loss(&constant_sims(4, 0.3), &uni()).unwrap().loss;
        assert!((l - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn uniform_b2_samtone_is_ln3() {
        let cfg = LossConfig { samtone_mode: SamToNeMode::QuerySide, ..uni() };
        let l = samtone_loss(&constant_sims(2, 0.3), &cfg).unwrap().loss;
        assert!((l - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn pair_alpha_one_uniform_b3_is_ln2() {
        let cfg = LossConfig { pair_alpha: 1.0, ..uni() };
        let l = pair_loss(&constant_sims(3, 0.4), &cfg).unwrap().loss;
        assert!((l - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn pair_alpha_zero_is_contrastive_bit_exact() {
        let mut rng = Rng::new(4);
        let s = similarity_matrices(&unit_rows(&mut rng, 8, 5), &unit_rows(&mut rng, 8, 5)).unwrap();
        let cfg = LossConfig { pair_alpha: 0.0, ..uni() };
        let a = pair_loss(&s, &cfg).unwrap();
        let b = contrastive_loss(&s, &cfg).unwrap();
        assert_eq!(a.loss.to_bits(), b.loss.to_bits());
        assert_eq!(a.grad_q, b.grad_q);
    }

    #[test]
    fn pair_batch_of_one_errors() {
        let s = constant_sims(1, 1.0);
        assert!(matches!(pair_loss(&s, &uni()), Err(Error::Parameter(_))));
        let cfg = LossConfig { pair_alpha: 0.0, ..uni() };
        assert!(pair_loss(&s, &cfg).is_ok());
    }

    #[test]
    fn symmetric_qp_bidirectional_equals_contrastive() {
        let mut rng = Rng::new(5);
        let q = unit_rows(&mut rng, 6, 4);
        let s = similarity_matrices(&q, &q).unwrap();
        let a = bidirectional_loss(&s, &uni()).unwrap().loss;
        let b = contrastive_loss(&s, &uni()).unwrap().loss;
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn mask_examples() {
        assert!(duplicate_mask(&["a", "b", "c"]).iter().all(|&m| !m));
        let m = duplicate_mask(&["a", "b", "a"]);
        let on: Vec<usize> = (0..9).filter(|&k| m[k]).collect();
        assert_eq!(on, vec![2, 6]);
    }

    #[test]
    fn invalid_config_rejected() {
        let s = constant_sims(2, 0.0);
        let bad_tau = LossConfig { temperature: 0.0, ..uni() };
        assert!(contrastive_loss(&s, &bad_tau).is_err());
        let bad_alpha = LossConfig { pair_alpha: 1.5, ..uni() };
        assert!(pair_loss(&s, &bad_alpha).is_err());
    }

    #[test]
    fn similarity_shapes_checked() {
        let a = Matrix::<f64>::zeros(2, 3);
        let b = Matrix::<f64>::zeros(3, 3);
        assert!(similarity_matrices(&a, &b).is_err());
    }

    #[test]
    fn orthonormal_rows_give_identity_qq() {
        let q = Matrix::<f64>::identity(4);
        let s = similarity_matrices(&q, &q).unwrap();
        assert_eq!(s.qq, Matrix::identity(4));
        assert!((0..4).all(|i| s.qp[(i, i)] == 1.0));
    }
}
