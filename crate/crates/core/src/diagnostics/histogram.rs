use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fixed-edge histogram with explicit under/overflow counters.
///
/// Bins are half-open `[lo, hi)` except the last, which also holds its
/// upper edge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    edges: Vec<f64>,
    counts: Vec<u64>,
    underflow: u64,
    overflow: u64,
}

/// `bins` equal-width bins over `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BinSpec {
    pub lo: f64,
    pub hi: f64,
    pub bins: usize,
}

impl BinSpec {
    pub fn cosine(bins: usize) -> Self {
        Self { lo: -1.0, hi: 1.0, bins }
    }
}

impl Histogram {
    pub fn from_edges(edges: Vec<f64>) -> Result<Self> {
        if edges.len() < 2 {
            return Err(Error::param("histogram needs at least two edges"));
        }
        if edges.windows(2).any(|w| !(w[0] < w[1])) || edges.iter().any(|e| !e.is_finite()) {
            return Err(Error::param("histogram edges must be finite and strictly increasing"));
        }
        let bins = edges.len() - 1;
        Ok(Self { edges, counts: vec![0; bins], underflow: 0, overflow: 0 })
    }

    pub fn uniform(layout: BinSpec) -> Result<Self> {
        if layout.bins == 0 {
            return Err(Error::param("histogram needs at least one bin"));
        }
        let w = (layout.hi - layout.lo) / layout.bins as f64;
        let mut edges: Vec<f64> = (0..layout.bins).map(|k| layout.lo + w * k as f64).collect();
        edges.push(layout.hi);
        Self::from_edges(edges)
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn underflow(&self) -> u64 {
        self.underflow
    }

    pub fn overflow(&self) -> u64 {
        self.overflow
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum::<u64>() + self.underflow + self.overflow
    }

    /// Bin holding `x`, or `None` outside the edge range.
    pub fn bin_of(&self, x: f64) -> Option<usize> {
        let lo = self.edges[0];
        let hi = *self.edges.last().unwrap();
        if !(x >= lo) || x > hi {
            return None;
        }
        let bins = self.counts.len();
        // First edge strictly greater than x, minus one; the top edge lands in the last bin.
        let k = self.edges.partition_point(|&e| e <= x);
        Some(k.saturating_sub(1).min(bins - 1))
    }

    pub fn add(&mut self, x: f64) {
        match self.bin_of(x) {
            Some(k) => self.counts[k] += 1,
            None if x < self.edges[0] => self.underflow += 1,
            None => self.overflow += 1,
        }
    }

    /// `bin_lo,bin_hi,count` rows with a header.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("bin_lo,bin_hi,count\n");
        for (k, c) in self.counts.iter().enumerate() {
            let _ = writeln!(s, "{},{},{}", self.edges[k], self.edges[k + 1], c);
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    pub median: f64,
}

impl Summary {
    pub fn of(samples: &[f64]) -> Self {
        let n = samples.len();
        if n == 0 {
            return Self { n, mean: f64::NAN, median: f64::NAN };
        }
        let mean = samples.iter().sum::<f64>() / n as f64;
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        let median = if n % 2 == 1 { sorted[n / 2] } else { 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]) };
        Self { n, mean, median }
    }
}

/// Histogram plus summary statistics of the raw samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Distribution {
    pub histogram: Histogram,
    pub summary: Summary,
}

impl Distribution {
    pub fn from_samples(samples: &[f64], layout: BinSpec) -> Result<Self> {
        let mut histogram = Histogram::uniform(layout)?;
        samples.iter().for_each(|&x| histogram.add(x));
        Ok(Self { histogram, summary: Summary::of(samples) })
    }
}
