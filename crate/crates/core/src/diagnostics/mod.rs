//! Embedding-space analysis: nearest-neighbour similarity distributions,
//! same-tower/cross-tower similarity ratios, t-SNE maps and a scalar
//! measure of how interleaved the two towers are in such a map.

mod histogram;
mod plot;
pub mod tsne;

pub use histogram::{BinSpec, Distribution, Histogram, Summary};
pub use plot::{projection_csv, projection_svg};
pub use tsne::{tsne, Projection2D, TsneConfig};

use serde::{Deserialize, Serialize};

use crate::encoder::Tower;
use crate::error::{Error, Result};
use crate::numerics::{dot, Matrix, Rng};
use crate::retrieval::{knn, Index};
use crate::scalar::Scalar;

/// Distribution of each query's cosine similarity to its rank-1 neighbour.
pub fn top1_similarity_distribution<T: Scalar>(queries: &Matrix<T>, index: &Index<T>, bins: BinSpec) -> Result<Distribution> {
    if bins.bins < 2 {
        return Err(Error::param("top-1 histogram needs at least 2 bins"));
    }
    let scores = (0..queries.rows())
        .map(|r| Ok(knn(queries.row(r), index, 1)?[0].score.to_f64_lossy()))
        .collect::<Result<Vec<f64>>>()?;
    Distribution::from_samples(&scores, bins)
}

/// Denominators with magnitude below this are resampled.
pub const RATIO_DENOM_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioDistribution {
    pub distribution: Distribution,
    /// Draws rejected for a near-zero denominator.
    pub resampled: usize,
}

/// Histogram of `sim(q_i, q_j) / sim(q_i, p_j)` over random `i != j`.
///
/// Pairs are drawn from `rng` in order, so two models evaluated with equally
/// seeded generators see the same pair sequence (up to rejected draws).
pub fn qq_qd_ratio_histogram<T: Scalar>(
    q: &Matrix<T>,
    p: &Matrix<T>,
    samples: usize,
    rng: &mut Rng,
    bins: BinSpec,
) -> Result<RatioDistribution> {
    let b = q.rows();
    if q.shape() != p.shape() {
        return Err(Error::shape("qq_qd_ratio_histogram", format!("{:?} vs {:?}", q.shape(), p.shape())));
    }
    if b < 2 {
        return Err(Error::param("ratio histogram needs at least two rows"));
    }
    let budget = 10 * samples + 1000;
    let mut ratios = Vec::with_capacity(samples);
    let mut resampled = 0usize;
    while ratios.len() < samples {
        let i = rng.below(b);
        let j = (i + 1 + rng.below(b - 1)) % b;
        let qd = dot(q.row(i), p.row(j)).to_f64_lossy();
        if qd.abs() < RATIO_DENOM_FLOOR {
            resampled += 1;
            if resampled > budget {
                return Err(Error::DegenerateGeometry(format!(
                    "{resampled} near-zero query-document similarities while sampling ratios"
                )));
            }
            continue;
        }
        ratios.push(dot(q.row(i), q.row(j)).to_f64_lossy() / qd);
    }
    Ok(RatioDistribution { distribution: Distribution::from_samples(&ratios, bins)?, resampled })
}

/// Fraction of points whose nearest other point in the map carries the
/// opposite tower label. Exact distance ties resolve to the opposite tower.
pub fn inter_tower_alignment<T: Scalar>(projection: &Projection2D<T>) -> Result<f64> {
    let y = &projection.points;
    let labels = &projection.labels;
    let n = y.rows();
    if labels.len() != n || n < 2 {
        return Err(Error::data("projection needs at least two labelled points"));
    }
    if !labels.contains(&Tower::Query) || !labels.contains(&Tower::Doc) {
        return Err(Error::data("alignment needs points from both towers"));
    }
    let mut opposite = 0usize;
    for i in 0..n {
        let mut best: Option<(T, bool)> = None;
        for j in (0..n).filter(|&j| j != i) {
            let dx = y[(i, 0)] - y[(j, 0)];
            let dy = y[(i, 1)] - y[(j, 1)];
            let d = dx * dx + dy * dy;
            let opp = labels[i] != labels[j];
            best = match best {
                None => Some((d, opp)),
                Some((bd, bo)) if d < bd || (d == bd && opp && !bo) => Some((d, opp)),
                keep => keep,
            };
        }
        if best.is_some_and(|(_, opp)| opp) {
            opposite += 1;
        }
    }
    Ok(opposite as f64 / n as f64)
}
