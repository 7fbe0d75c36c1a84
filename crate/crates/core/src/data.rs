//! Query/document pair corpora: JSON-lines I/O, duplicate statistics and a
//! topic-structured synthetic generator.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::error::Category;

use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::numerics::Rng;
use crate::retrieval::Judgments;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairRecord {
    pub query_id: String,
    pub query: String,
    pub doc_id: String,
    pub doc: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rel: Option<u32>,
}

/// Validated list of (query, gold document) records.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PairCorpus {
    records: Vec<PairRecord>,
}

impl PairCorpus {
    pub fn new(records: Vec<PairRecord>) -> Result<Self> {
        let mut seen = HashSet::new();
        for (n, r) in records.iter().enumerate() {
            let line = n + 1;
            if !seen.insert(r.query_id.as_str()) {
                return Err(Error::Schema { line, detail: format!("duplicate query_id {:?}", r.query_id) });
            }
            if r.query.trim().is_empty() || r.doc.trim().is_empty() {
                return Err(Error::Schema { line, detail: "query and doc text must be non-empty".into() });
            }
        }
        Ok(Self { records })
    }

    pub fn records(&self) -> &[PairRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// `(query_id, query_text)` in record order.
    pub fn queries(&self) -> Vec<(String, String)> {
        self.records.iter().map(|r| (r.query_id.clone(), r.query.clone())).collect()
    }

    /// Distinct documents in first-occurrence order. A doc id that appears
    /// with two different texts is a data error.
    pub fn unique_documents(&self) -> Result<Vec<(String, String)>> {
        let mut out: Vec<(String, String)> = Vec::new();
        let mut pos: HashMap<&str, usize> = HashMap::new();
        for r in &self.records {
            match pos.get(r.doc_id.as_str()) {
                Some(&i) if out[i].1 != r.doc => {
                    return Err(Error::data(format!("doc_id {:?} has conflicting texts", r.doc_id)));
                }
                Some(_) => {}
                None => {
                    pos.insert(&r.doc_id, out.len());
                    out.push((r.doc_id.clone(), r.doc.clone()));
                }
            }
        }
        Ok(out)
    }

    pub fn to_jsonl(&self) -> String {
        let mut s = String::new();
        for r in &self.records {
            s.push_str(&serde_json::to_string(r).expect("record serializes"));
            s.push('\n');
        }
        s
    }

    /// Judgments marking each query's own document relevant (grade `rel` or 1).
    pub fn gold_judgments(&self) -> Judgments {
        let mut j = Judgments::new();
        for r in &self.records {
            j.insert(r.query_id.clone(), r.doc_id.clone(), r.rel.unwrap_or(1));
        }
        j
    }
}

/// distinct doc ids / records. Returns 0 for an empty corpus.
pub fn unique_document_rate(corpus: &PairCorpus) -> f64 {
    if corpus.is_empty() {
        return 0.0;
    }
    let distinct: HashSet<&str> = corpus.records.iter().map(|r| r.doc_id.as_str()).collect();
    distinct.len() as f64 / corpus.len() as f64
}

pub fn parse_corpus(text: &str) -> Result<PairCorpus> {
    let mut records = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line_no = n + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec: PairRecord = serde_json::from_str(line).map_err(|e| match e.classify() {
            Category::Data => Error::Schema { line: line_no, detail: e.to_string() },
            _ => Error::Parse { line: line_no, detail: e.to_string() },
        })?;
        records.push(rec);
    }
    if records.is_empty() {
        return Err(Error::data("corpus is empty"));
    }
    PairCorpus::new(records)
}

pub fn load_corpus(path: &Path) -> Result<PairCorpus> {
    parse_corpus(&std::fs::read_to_string(path)?)
}

pub fn write_corpus(path: &Path, corpus: &PairCorpus) -> Result<()> {
    write_atomic(path, corpus.to_jsonl().as_bytes())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub num_topics: usize,
    pub queries_per_topic: usize,
    pub test_queries_per_topic: usize,
    /// Size of the word vocabulary the topics partition.
    pub vocab_size: usize,
    /// Inclusive token-count range for every generated text.
    pub tokens_per_text: (usize, usize),
    pub unique_doc_rate: f64,
    pub noise_rate: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_topics: 8,
            queries_per_topic: 125,
            test_queries_per_topic: 25,
            vocab_size: 256,
            tokens_per_text: (8, 16),
            unique_doc_rate: 0.95,
            noise_rate: 0.2,
            seed: 0,
        }
    }
}

impl SynthConfig {
    fn pool_size(&self) -> usize {
        self.vocab_size / self.num_topics.max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.tokens_per_text;
        if self.num_topics == 0 || self.queries_per_topic == 0 || self.test_queries_per_topic == 0 {
            return Err(Error::param("topic and query counts must be >= 1"));
        }
        if self.pool_size() == 0 {
            return Err(Error::param("vocab_size must be at least num_topics"));
        }
        if lo == 0 || lo > hi || hi > crate::encoder::MAX_TOKENS {
            return Err(Error::param(format!("tokens_per_text {lo}..={hi} invalid")));
        }
        if !(self.unique_doc_rate > 0.0 && self.unique_doc_rate <= 1.0) {
            return Err(Error::param("unique_doc_rate must lie in (0, 1]"));
        }
        if !(0.0..1.0).contains(&self.noise_rate) {
            return Err(Error::param("noise_rate must lie in [0, 1)"));
        }
        for qpt in [self.queries_per_topic, self.test_queries_per_topic] {
            docs_per_topic(self, qpt)?;
        }
        Ok(())
    }
}

/// Distinct documents per topic hitting `unique_doc_rate` as closely as integers allow.
fn docs_per_topic(cfg: &SynthConfig, qpt: usize) -> Result<Vec<usize>> {
    let total = cfg.num_topics * qpt;
    let distinct = (cfg.unique_doc_rate * total as f64).round() as usize;
    if distinct < cfg.num_topics {
        return Err(Error::param(format!(
            "unique_doc_rate {} gives {distinct} documents for {} topics; every topic needs one",
            cfg.unique_doc_rate, cfg.num_topics
        )));
    }
    let base = distinct / cfg.num_topics;
    let extra = distinct % cfg.num_topics;
    Ok((0..cfg.num_topics).map(|t| base + usize::from(t < extra)).collect())
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub train: PairCorpus,
    pub test: PairCorpus,
    /// Relevance for the test split.
    pub judgments: Judgments,
}

fn word(id: usize) -> String {
    format!("w{id}")
}

struct SplitGen<'a> {
    cfg: &'a SynthConfig,
    rng: Rng,
}

impl SplitGen<'_> {
    fn token(&mut self, pool: &[usize]) -> usize {
        if self.rng.bernoulli(self.cfg.noise_rate) {
            self.rng.below(self.cfg.vocab_size)
        } else {
            pool[self.rng.below(pool.len())]
        }
    }

    fn length(&mut self) -> usize {
        let (lo, hi) = self.cfg.tokens_per_text;
        self.rng.between(lo, hi)
    }

    fn text(&mut self, pool: &[usize]) -> String {
        let len = self.length();
        (0..len).map(|_| word(self.token(pool))).collect::<Vec<_>>().join(" ")
    }

    fn split(&mut self, qpt: usize, prefix: &str) -> Result<(PairCorpus, Judgments)> {
        let cfg = self.cfg;
        let pool_size = cfg.pool_size();
        let docs = docs_per_topic(cfg, qpt)?;
        let mut records = Vec::with_capacity(cfg.num_topics * qpt);
        for (topic, &n_docs) in docs.iter().enumerate() {
            let pool: Vec<usize> = (topic * pool_size..(topic + 1) * pool_size).collect();
            let topic_docs: Vec<String> = (0..n_docs).map(|_| self.text(&pool)).collect();
            for k in 0..qpt {
                let d = if k < n_docs { k } else { self.rng.below(n_docs) };
                let query = self.text(&pool);
                records.push(PairRecord {
                    query_id: format!("{prefix}q{topic}-{k}"),
                    query,
                    doc_id: format!("{prefix}d{topic}-{d}"),
                    doc: topic_docs[d].clone(),
                    rel: None,
                });
            }
        }
        self.rng.shuffle(&mut records);

        let mut by_text: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for r in &records {
            let ids = by_text.entry(r.doc.as_str()).or_default();
            if !ids.contains(&r.doc_id.as_str()) {
                ids.push(&r.doc_id);
            }
        }
        let mut judgments = Judgments::new();
        for r in &records {
            for id in &by_text[r.doc.as_str()] {
                judgments.insert(r.query_id.clone(), *id, 1);
            }
        }
        Ok((PairCorpus::new(records)?, judgments))
    }
}

/// Train and test splits over the same topics, plus test-split judgments.
///
/// Topics own disjoint word pools. Queries and documents draw their words
/// from their topic pool, each word replaced by a global noise word with
/// probability `noise_rate`. Documents are reused across queries of one topic
/// so the distinct-document fraction matches `unique_doc_rate`.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<SyntheticCorpus> {
    cfg.validate()?;
    let root = Rng::new(cfg.seed);
    let mut train_gen = SplitGen { cfg, rng: root.split(0x5eed_0001) };
    let (train, _) = train_gen.split(cfg.queries_per_topic, "")?;
    let mut test_gen = SplitGen { cfg, rng: root.split(0x5eed_0002) };
    let (test, judgments) = test_gen.split(cfg.test_queries_per_topic, "test-")?;
    Ok(SyntheticCorpus { train, test, judgments })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(q: &str, d: &str) -> PairRecord {
        PairRecord { query_id: q.into(), query: format!("text {q}"), doc_id: d.into(), doc: format!("doc {d}"), rel: None }
    }

    #[test]
    fn empty_file_is_error() {
        assert!(matches!(parse_corpus(""), Err(Error::Data(_))));
        assert!(matches!(parse_corpus("\n  \n"), Err(Error::Data(_))));
    }

    #[test]
    fn two_lines() {
        let text = "{\"query_id\":\"1\",\"query\":\"a b\",\"doc_id\":\"x\",\"doc\":\"c d\"}\n\
                    {\"query_id\":\"2\",\"query\":\"e\",\"doc_id\":\"y\",\"doc\":\"f\",\"rel\":2}\n";
        let c = parse_corpus(text).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.records()[1].rel, Some(2));
    }

    #[test]
    fn line_numbered_errors() {
        let good = "{\"query_id\":\"1\",\"query\":\"a\",\"doc_id\":\"x\",\"doc\":\"c\"}";
        let malformed = format!("{good}\n{{not json\n");
        assert!(matches!(parse_corpus(&malformed), Err(Error::Parse { line: 2, .. })));
        let missing = format!("{good}\n{{\"query_id\":\"2\",\"query\":\"a\"}}\n");
        assert!(matches!(parse_corpus(&missing), Err(Error::Schema { line: 2, .. })));
        let dup = format!("{good}\n{good}\n");
        assert!(matches!(parse_corpus(&dup), Err(Error::Schema { line: 2, .. })));
    }

    #[test]
    fn unique_rate_counts() {
        let all: Vec<_> = (0..4).map(|i| rec(&format!("q{i}"), &format!("d{i}"))).collect();
        assert_eq!(unique_document_rate(&PairCorpus::new(all).unwrap()), 1.0);
        let one: Vec<_> = (0..5).map(|i| rec(&format!("q{i}"), "d")).collect();
        assert!((unique_document_rate(&PairCorpus::new(one).unwrap()) - 0.2).abs() < 1e-15);
        // 10 lines over doc ids d0,d1,d2 (d0 five times): 3 distinct.
        let ten: Vec<_> = (0..10)
            .map(|i| rec(&format!("q{i}"), ["d0", "d1", "d0", "d2", "d0", "d1", "d0", "d2", "d0", "d1"][i]))
            .collect();
        assert!((unique_document_rate(&PairCorpus::new(ten).unwrap()) - 0.3).abs() < 1e-15);
    }

    #[test]
    fn unique_documents_rejects_conflicts() {
        let mut a = rec("q1", "d");
        let b = rec("q2", "d");
        assert_eq!(PairCorpus::new(vec![a.clone(), b.clone()]).unwrap().unique_documents().unwrap().len(), 1);
        a.doc = "other".into();
        assert!(PairCorpus::new(vec![a, b]).unwrap().unique_documents().is_err());
    }

    #[test]
    fn synth_single_pair() {
        let cfg = SynthConfig { num_topics: 1, queries_per_topic: 1, test_queries_per_topic: 1, unique_doc_rate: 1.0, ..Default::default() };
        let s = generate_synthetic(&cfg).unwrap();
        assert_eq!(s.train.len(), 1);
        assert_eq!(unique_document_rate(&s.train), 1.0);
    }

    #[test]
    fn synth_is_deterministic() {
        let cfg = SynthConfig { queries_per_topic: 20, test_queries_per_topic: 5, ..Default::default() };
        let a = generate_synthetic(&cfg).unwrap();
        let b = generate_synthetic(&cfg).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.test, b.test);
        assert_eq!(a.judgments, b.judgments);
        let c = generate_synthetic(&SynthConfig { seed: 1, ..cfg }).unwrap();
        assert_ne!(a.train, c.train);
    }

    #[test]
    fn synth_hits_rate_target() {
        let cfg = SynthConfig { num_topics: 5, queries_per_topic: 100, unique_doc_rate: 0.2, ..Default::default() };
        let s = generate_synthetic(&cfg).unwrap();
        let r = unique_document_rate(&s.train);
        assert!((0.18..=0.22).contains(&r), "{r}");
    }

    #[test]
    fn synth_infeasible_rate() {
        let cfg = SynthConfig { num_topics: 8, queries_per_topic: 2, unique_doc_rate: 0.1, ..Default::default() };
        assert!(matches!(generate_synthetic(&cfg), Err(Error::Parameter(_))));
    }

    #[test]
    fn synth_splits_disjoint_and_judged() {
        let cfg = SynthConfig { queries_per_topic: 10, test_queries_per_topic: 4, ..Default::default() };
        let s = generate_synthetic(&cfg).unwrap();
        let train: HashSet<_> = s.train.records().iter().map(|r| r.query_id.clone()).collect();
        for r in s.test.records() {
            assert!(!train.contains(&r.query_id));
            assert_eq!(s.judgments.grade(&r.query_id, &r.doc_id), 1);
        }
        assert_eq!(s.judgments.num_queries(), s.test.len());
    }

    #[test]
    fn round_trip_through_file() {
        let cfg = SynthConfig { queries_per_topic: 6, ..Default::default() };
        let s = generate_synthetic(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("train.jsonl");
        write_corpus(&p, &s.train).unwrap();
        assert_eq!(load_corpus(&p).unwrap(), s.train);
    }
}
