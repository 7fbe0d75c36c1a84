//! Exact cosine nearest-neighbour search and ranking metrics.

use std::collections::BTreeMap;
use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use crate::encoder::{tokenize, ModelParams, Tower};
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::numerics::{dot, norm, Matrix};
use crate::scalar::Scalar;

/// Graded relevance: query id -> candidate id -> grade.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Judgments {
    map: BTreeMap<String, BTreeMap<String, u32>>,
}

impl Judgments {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, query_id: impl Into<String>, candidate_id: impl Into<String>, grade: u32) {
        self.map.entry(query_id.into()).or_default().insert(candidate_id.into(), grade);
    }

    pub fn for_query(&self, query_id: &str) -> Option<&BTreeMap<String, u32>> {
        self.map.get(query_id)
    }

    pub fn grade(&self, query_id: &str, candidate_id: &str) -> u32 {
        self.map.get(query_id).and_then(|m| m.get(candidate_id)).copied().unwrap_or(0)
    }

    pub fn num_queries(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &BTreeMap<String, u32>)> {
        self.map.iter()
    }

    /// Tab-separated `query_id, candidate_id, grade` with a header line.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("query_id\tcandidate_id\tgrade\n");
        for (q, cands) in &self.map {
            for (c, g) in cands {
                let _ = writeln!(out, "{q}\t{c}\t{g}");
            }
        }
        out
    }

    /// Parses the TSV form; a leading `query_id` header is optional.
    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut j = Self::new();
        for (n, line) in text.lines().enumerate() {
            let line_no = n + 1;
            if line.trim().is_empty() || (n == 0 && line.starts_with("query_id\t")) {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(Error::Parse { line: line_no, detail: format!("expected 3 tab-separated fields, got {}", fields.len()) });
            }
            let grade: u32 = fields[2].trim().parse().map_err(|_| Error::Parse {
                line: line_no,
                detail: format!("grade {:?} is not a nonnegative integer", fields[2]),
            })?;
            j.insert(fields[0], fields[1], grade);
        }
        Ok(j)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_tsv(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_tsv().as_bytes())
    }
}

/// Unit-norm candidate embeddings with their identity keys.
#[derive(Debug, Clone)]
pub struct Index<T> {
    embeddings: Matrix<T>,
    ids: Vec<String>,
}

impl<T: Scalar> Index<T> {
    pub fn new(embeddings: Matrix<T>, ids: Vec<String>) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::data("index needs at least one candidate"));
        }
        if embeddings.rows() != ids.len() {
            return Err(Error::shape("Index::new", format!("{} rows for {} ids", embeddings.rows(), ids.len())));
        }
        let mut seen = HashSet::new();
        if let Some(dup) = ids.iter().find(|id| !seen.insert(id.as_str())) {
            return Err(Error::data(format!("duplicate candidate id {dup:?}")));
        }
        let tol = T::of(1e-9);
        for r in 0..embeddings.rows() {
            if (norm(embeddings.row(r)) - T::one()).abs() > tol {
                return Err(Error::data(format!("index row {r} is not unit-norm")));
            }
        }
        Ok(Self { embeddings, ids })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn embeddings(&self) -> &Matrix<T> {
        &self.embeddings
    }
}

/// Encodes `(id, text)` candidates with the document tower.
pub fn build_index<T: Scalar>(params: &ModelParams<T>, docs: &[(String, String)]) -> Result<Index<T>> {
    if docs.is_empty() {
        return Err(Error::data("cannot index an empty corpus"));
    }
    let vocab = params.config().vocab_size;
    let seqs = docs.iter().map(|(_, text)| tokenize(text, vocab)).collect::<Result<Vec<_>>>()?;
    let emb = params.encode_batch(Tower::Doc, &seqs)?;
    Index::new(emb, docs.iter().map(|(id, _)| id.clone()).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hit<T> {
    pub candidate_id: String,
    pub score: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ranking<T> {
    pub query_id: String,
    pub hits: Vec<Hit<T>>,
}

/// Top-`k` candidates by dot product, descending; ties go to the earlier-inserted candidate.
pub fn knn<T: Scalar>(query: &[T], index: &Index<T>, k: usize) -> Result<Vec<Hit<T>>> {
    if k == 0 || k > index.len() {
        return Err(Error::param(format!("k = {k} outside 1..={}", index.len())));
    }
    if query.len() != index.embeddings.cols() {
        return Err(Error::shape("knn", format!("query dim {} vs index dim {}", query.len(), index.embeddings.cols())));
    }
    let mut scored: Vec<(usize, T)> =
        (0..index.len()).map(|r| (r, dot(query, index.embeddings.row(r)))).collect();
    // Stable sort keeps insertion order among equal scores.
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal));
    Ok(scored
        .into_iter()
        .take(k)
        .map(|(r, score)| Hit { candidate_id: index.ids[r].clone(), score })
        .collect())
}

/// Encodes each `(id, text)` query and ranks the index.
pub fn rank_queries<T: Scalar>(
    params: &ModelParams<T>,
    queries: &[(String, String)],
    index: &Index<T>,
    k: usize,
) -> Result<Vec<Ranking<T>>> {
    let vocab = params.config().vocab_size;
    queries
        .iter()
        .map(|(qid, text)| {
            let e = params.encode(Tower::Query, &tokenize(text, vocab)?)?;
            Ok(Ranking { query_id: qid.clone(), hits: knn(&e, index, k)? })
        })
        .collect()
}

pub fn rankings_to_tsv<T: Scalar>(rankings: &[Ranking<T>]) -> String {
    let mut out = String::from("query_id\trank\tcandidate_id\tscore\n");
    for r in rankings {
        for (pos, h) in r.hits.iter().enumerate() {
            let _ = writeln!(out, "{}\t{}\t{}\t{}", r.query_id, pos + 1, h.candidate_id, h.score);
        }
    }
    out
}

fn judged<'a>(j: &'a Judgments, query_id: &str) -> Result<&'a BTreeMap<String, u32>> {
    let m = j
        .for_query(query_id)
        .ok_or_else(|| Error::data(format!("query {query_id:?} has no judgments")))?;
    if m.values().all(|&g| g == 0) {
        return Err(Error::data(format!("query {query_id:?} has no relevant candidate")));
    }
    Ok(m)
}

fn nonempty<T>(rankings: &[Ranking<T>]) -> Result<()> {
    if rankings.is_empty() {
        Err(Error::data("no rankings to evaluate"))
    } else {
        Ok(())
    }
}

/// Fraction of queries whose first hit has grade > 0.
pub fn precision_at_1<T: Scalar>(rankings: &[Ranking<T>], judgments: &Judgments) -> Result<f64> {
    nonempty(rankings)?;
    let mut hits = 0usize;
    for r in rankings {
        let m = judged(judgments, &r.query_id)?;
        if r.hits.first().is_some_and(|h| m.get(&h.candidate_id).copied().unwrap_or(0) > 0) {
            hits += 1;
        }
    }
    Ok(hits as f64 / rankings.len() as f64)
}

/// 1-based rank of the first relevant hit within the first `cutoff` hits.
pub fn first_relevant_rank<T>(ranking: &Ranking<T>, grades: &BTreeMap<String, u32>, cutoff: Option<usize>) -> Option<usize> {
    let limit = cutoff.unwrap_or(usize::MAX);
    ranking
        .hits
        .iter()
        .take(limit)
        .position(|h| grades.get(&h.candidate_id).copied().unwrap_or(0) > 0)
        .map(|p| p + 1)
}

/// Mean reciprocal rank; a query with no relevant hit (within `cutoff`) contributes 0.
pub fn mrr<T: Scalar>(rankings: &[Ranking<T>], judgments: &Judgments, cutoff: Option<usize>) -> Result<f64> {
    nonempty(rankings)?;
    let mut total = 0.0;
    for r in rankings {
        let m = judged(judgments, &r.query_id)?;
        if let Some(rank) = first_relevant_rank(r, m, cutoff) {
            total += 1.0 / rank as f64;
        }
    }
    Ok(total / rankings.len() as f64)
}

fn dcg(grades: impl Iterator<Item = u32>) -> f64 {
    grades
        .enumerate()
        .map(|(pos, g)| (2f64.powi(g as i32) - 1.0) / ((pos + 2) as f64).log2())
        .sum()
}

/// NDCG with exponential gain `2^grade - 1` and `1/log2(rank + 1)` discount.
pub fn ndcg_at_k<T: Scalar>(rankings: &[Ranking<T>], judgments: &Judgments, k: usize) -> Result<f64> {
    nonempty(rankings)?;
    let mut total = 0.0;
    for r in rankings {
        let m = judged(judgments, &r.query_id)?;
        let got = dcg(r.hits.iter().take(k).map(|h| m.get(&h.candidate_id).copied().unwrap_or(0)));
        let mut ideal: Vec<u32> = m.values().copied().collect();
        ideal.sort_unstable_by(|a, b| b.cmp(a));
        total += got / dcg(ideal.into_iter().take(k));
    }
    Ok(total / rankings.len() as f64)
}

pub fn ndcg_at_10<T: Scalar>(rankings: &[Ranking<T>], judgments: &Judgments) -> Result<f64> {
    ndcg_at_k(rankings, judgments, 10)
}

/// Expected reciprocal rank of the first relevant item when `relevant` of
/// `n` candidates are relevant and the ranking is a uniform permutation.
pub fn random_reciprocal_rank(n: usize, relevant: usize) -> f64 {
    if relevant == 0 || n == 0 {
        return 0.0;
    }
    let r = relevant.min(n);
    // P(first >= m) = C(n-m+1, r) / C(n, r); accumulate the survival ratio incrementally.
    let mut survive = 1.0;
    let mut expected = 0.0;
    for m in 1..=(n - r + 1) {
        // P(first == m) = survive(m) * r / (n - m + 1)
        let p_here = survive * r as f64 / (n - m + 1) as f64;
        expected += p_here / m as f64;
        survive *= (n - m + 1 - r) as f64 / (n - m + 1) as f64;
    }
    expected
}

/// Analytic MRR of a uniformly random ranking of `num_candidates` items.
pub fn random_ranking_mrr(num_candidates: usize, judgments: &Judgments, query_ids: &[String]) -> Result<f64> {
    if query_ids.is_empty() {
        return Err(Error::data("no queries"));
    }
    let mut total = 0.0;
    for q in query_ids {
        let m = judged(judgments, q)?;
        total += random_reciprocal_rank(num_candidates, m.values().filter(|&&g| g > 0).count());
    }
    Ok(total / query_ids.len() as f64)
}
