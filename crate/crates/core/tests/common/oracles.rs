//! Brute-force reference implementations, written without the library's helpers.

#![allow(dead_code)]

use duallab::diagnostics::tsne::{conditional_affinities, joint_affinities, pairwise_sq_distances};
use duallab::diagnostics::{tsne, TsneConfig};
use duallab::encoder::Tower;
use duallab::numerics::{Matrix, Rng};
use duallab::retrieval::{Hit, Index, Judgments, Ranking};

pub fn grade_of(j: &Judgments, q: &str, c: &str) -> u32 {
    j.iter().find(|(qid, _)| qid.as_str() == q).and_then(|(_, m)| m.get(c).copied()).unwrap_or(0)
}

pub fn scan_p_at_1(rankings: &[Ranking<f64>], j: &Judgments) -> f64 {
    let mut hits = 0.0;
    for r in rankings {
        if !r.hits.is_empty() && grade_of(j, &r.query_id, &r.hits[0].candidate_id) > 0 {
            hits += 1.0;
        }
    }
    hits / rankings.len() as f64
}

pub fn scan_mrr(rankings: &[Ranking<f64>], j: &Judgments) -> f64 {
    let mut total = 0.0;
    for r in rankings {
        for (pos, h) in r.hits.iter().enumerate() {
            if grade_of(j, &r.query_id, &h.candidate_id) > 0 {
                total += 1.0 / (pos + 1) as f64;
                break;
            }
        }
    }
    total / rankings.len() as f64
}

pub fn scan_ndcg10(rankings: &[Ranking<f64>], j: &Judgments) -> f64 {
    let mut total = 0.0;
    for r in rankings {
        let mut dcg = 0.0;
        for pos in 0..r.hits.len().min(10) {
            let g = grade_of(j, &r.query_id, &r.hits[pos].candidate_id);
            dcg += (2f64.powi(g as i32) - 1.0) / (pos as f64 + 2.0).log2();
        }
        // Ideal: repeatedly take the largest remaining grade.
        let mut grades: Vec<u32> = j
            .iter()
            .find(|(qid, _)| qid.as_str() == r.query_id)
            .map(|(_, m)| m.values().copied().collect())
            .unwrap_or_default();
        let mut idcg = 0.0;
        for pos in 0..10 {
            let Some((at, &g)) = grades.iter().enumerate().max_by_key(|&(_, g)| *g) else { break };
            idcg += (2f64.powi(g as i32) - 1.0) / (pos as f64 + 2.0).log2();
            grades.remove(at);
        }
        total += dcg / idcg;
    }
    total / rankings.len() as f64
}

/// Rankings over shuffled candidates with ties in scores and graded judgments.
pub fn random_ranking_instance(rng: &mut Rng) -> (Vec<Ranking<f64>>, Judgments) {
    let nq = 1 + rng.below(8);
    let nd = 1 + rng.below(25);
    let mut j = Judgments::new();
    let mut rankings = Vec::new();
    for q in 0..nq {
        let qid = format!("q{q}");
        // At least one relevant candidate, possibly unranked.
        j.insert(qid.clone(), format!("d{}", rng.below(nd + 3)), 1 + rng.below(3) as u32);
        for d in 0..nd {
            if rng.bernoulli(0.3) {
                j.insert(qid.clone(), format!("d{d}"), rng.below(4) as u32);
            }
        }
        if j.for_query(&qid).unwrap().values().all(|&g| g == 0) {
            j.insert(qid.clone(), "d0", 1);
        }
        let mut docs: Vec<usize> = (0..nd).collect();
        rng.shuffle(&mut docs);
        docs.truncate(1 + rng.below(nd));
        let hits = docs
            .iter()
            .enumerate()
            .map(|(pos, &d)| Hit { candidate_id: format!("d{d}"), score: -(pos as f64) })
            .collect();
        rankings.push(Ranking { query_id: qid, hits });
    }
    (rankings, j)
}

/// Every score, fully sorted by (score desc, insertion order asc).
pub fn full_sort_knn(query: &[f64], index: &Index<f64>, k: usize) -> Vec<Hit<f64>> {
    let emb = index.embeddings();
    let mut all: Vec<(f64, usize)> = (0..emb.rows())
        .map(|r| (emb.row(r).iter().zip(query).map(|(a, b)| a * b).sum(), r))
        .collect();
    all.sort_unstable_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    all.into_iter().take(k).map(|(s, r)| Hit { candidate_id: index.ids()[r].clone(), score: s }).collect()
}

/// Index of `n` unit vectors with some exact duplicates to exercise tie-breaking.
pub fn random_index(rng: &mut Rng, n: usize, dim: usize) -> Index<f64> {
    let mut emb = Matrix::from_fn(n, dim, |_, _| rng.normal()).l2_normalize_rows().unwrap();
    for r in 1..n {
        if rng.bernoulli(0.1) {
            let src = emb.row(rng.below(r)).to_vec();
            emb.row_mut(r).copy_from_slice(&src);
        }
    }
    Index::new(emb, (0..n).map(|i| format!("d{i}")).collect()).unwrap()
}

pub struct TsneCheck {
    pub p_sum_error: f64,
    pub worst_entropy_gap: f64,
    pub kl_after_exaggeration: f64,
    pub kl_final: f64,
}

/// Random Gaussian clusters so the input has structure for t-SNE to find.
pub fn random_tsne_input(rng: &mut Rng) -> Matrix<f64> {
    let n = 40 + rng.below(41);
    let dim = 3 + rng.below(8);
    let k = 1 + rng.below(4);
    let centres = Matrix::from_fn(k, dim, |_, _| 4.0 * rng.normal());
    Matrix::from_fn(n, dim, |r, c| centres[(r % k, c)] + rng.normal())
}

pub fn check_tsne(x: &Matrix<f64>, cfg: &TsneConfig) -> TsneCheck {
    let aff = joint_affinities(x, cfg.perplexity).unwrap();
    let p_sum: f64 = aff.p.data().iter().sum();
    // Entropy recomputed from the conditional rows.
    let (cond, _) = conditional_affinities(&pairwise_sq_distances(x), cfg.perplexity);
    let target = cfg.perplexity.ln();
    let mut worst = 0.0f64;
    for i in 0..cond.rows() {
        let h: f64 = cond.row(i).iter().filter(|&&v| v > 0.0).map(|&v| -v * v.ln()).sum();
        worst = worst.max((h - target).abs());
    }
    let labels: Vec<Tower> = (0..x.rows()).map(|i| if i % 2 == 0 { Tower::Query } else { Tower::Doc }).collect();
    let proj = tsne(x, &labels, cfg).unwrap();
    TsneCheck {
        p_sum_error: (p_sum - 1.0).abs(),
        worst_entropy_gap: worst,
        kl_after_exaggeration: proj.kl_after_exaggeration.unwrap(),
        kl_final: proj.kl,
    }
}

/// Mean silhouette of a 2-D layout under the given cluster labels.
pub fn silhouette(y: &Matrix<f64>, labels: &[usize]) -> f64 {
    let n = y.rows();
    let dist = |a: usize, b: usize| ((y[(a, 0)] - y[(b, 0)]).powi(2) + (y[(a, 1)] - y[(b, 1)]).powi(2)).sqrt();
    let k = labels.iter().max().unwrap() + 1;
    let mut total = 0.0;
    for i in 0..n {
        let mut sums = vec![0.0; k];
        let mut counts = vec![0usize; k];
        for j in (0..n).filter(|&j| j != i) {
            sums[labels[j]] += dist(i, j);
            counts[labels[j]] += 1;
        }
        let a = sums[labels[i]] / counts[labels[i]] as f64;
        let b = (0..k).filter(|&c| c != labels[i]).map(|c| sums[c] / counts[c] as f64).fold(f64::INFINITY, f64::min);
        total += (b - a) / a.max(b);
    }
    total / n as f64
}
