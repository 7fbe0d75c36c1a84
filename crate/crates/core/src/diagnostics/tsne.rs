//! Exact t-SNE.
//!
//! Gaussian input affinities with per-point bandwidth chosen by bisection
//! on the row entropy, symmetrized and normalized to sum to one; Student-t
//! output affinities; gradient descent with momentum, per-coordinate gains
//! and early exaggeration. Cost is O(N^2) per iteration.

use serde::{Deserialize, Serialize};

use crate::encoder::Tower;
use crate::error::{Error, Result};
use crate::numerics::{Matrix, Rng};
use crate::scalar::Scalar;

pub const MAX_POINTS: usize = 2000;
pub const ENTROPY_TOL: f64 = 1e-5;
pub const BANDWIDTH_ITERS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub final_momentum: f64,
    pub early_exaggeration: f64,
    /// Iterations run with exaggerated P; momentum switches at the same point.
    pub exaggeration_iters: usize,
    pub init_std: f64,
    pub seed: u64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        Self {
            perplexity: 30.0,
            iterations: 1000,
            learning_rate: 100.0,
            momentum: 0.5,
            final_momentum: 0.8,
            early_exaggeration: 12.0,
            exaggeration_iters: 250,
            init_std: 1e-4,
            seed: 0,
        }
    }
}

impl TsneConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        if n < 4 {
            return Err(Error::param(format!("t-SNE needs at least 4 points, got {n}")));
        }
        if n > MAX_POINTS {
            return Err(Error::param(format!("exact t-SNE is capped at {MAX_POINTS} points, got {n}")));
        }
        if !(self.perplexity >= 2.0) || self.perplexity >= (n - 1) as f64 {
            return Err(Error::param(format!("perplexity {} must lie in [2, {})", self.perplexity, n - 1)));
        }
        if self.iterations < self.exaggeration_iters {
            return Err(Error::param("iterations must cover the early-exaggeration phase"));
        }
        if !(self.learning_rate > 0.0) || !(self.early_exaggeration >= 1.0) || !(self.init_std > 0.0) {
            return Err(Error::param("learning_rate, early_exaggeration and init_std must be positive"));
        }
        for m in [self.momentum, self.final_momentum] {
            if !(0.0..1.0).contains(&m) {
                return Err(Error::param(format!("momentum {m} outside [0, 1)")));
            }
        }
        Ok(())
    }
}

pub fn pairwise_sq_distances<T: Scalar>(x: &Matrix<T>) -> Matrix<T> {
    let n = x.rows();
    let mut d = Matrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let s: T = x.row(i).iter().zip(x.row(j)).map(|(&a, &b)| (a - b) * (a - b)).sum();
            d[(i, j)] = s;
            d[(j, i)] = s;
        }
    }
    d
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bandwidth {
    pub beta: f64,
    pub entropy: f64,
    pub converged: bool,
}

/// Row distribution `exp(-beta * d_j) / Z` over `j != i` and its Shannon entropy (nats).
fn row_distribution(d: &[f64], i: usize, beta: f64, out: &mut [f64]) -> f64 {
    let dmin = d.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, &v)| v).fold(f64::INFINITY, f64::min);
    let mut z = 0.0;
    let mut weighted = 0.0;
    for (j, (&dj, o)) in d.iter().zip(out.iter_mut()).enumerate() {
        if j == i {
            *o = 0.0;
            continue;
        }
        let shifted = dj - dmin;
        *o = (-beta * shifted).exp();
        z += *o;
        weighted += shifted * *o;
    }
    out.iter_mut().for_each(|o| *o /= z);
    z.ln() + beta * weighted / z
}

/// Conditional affinities `p_{j|i}` with each row's entropy matched to `ln(perplexity)`.
pub fn conditional_affinities<T: Scalar>(dist: &Matrix<T>, perplexity: f64) -> (Matrix<T>, Vec<Bandwidth>) {
    let n = dist.rows();
    let target = perplexity.ln();
    let mut p = Matrix::zeros(n, n);
    let mut bands = Vec::with_capacity(n);
    let mut row = vec![0.0; n];
    for i in 0..n {
        let d: Vec<f64> = dist.row(i).iter().map(|v| v.to_f64_lossy()).collect();
        let mean = d.iter().sum::<f64>() / (n - 1) as f64;
        let mut beta = if mean > 0.0 { 1.0 / mean } else { 1.0 };
        let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
        let mut h = row_distribution(&d, i, beta, &mut row);
        let mut converged = (h - target).abs() < ENTROPY_TOL;
        let mut iter = 0;
        while !converged && iter < BANDWIDTH_ITERS {
            if h > target {
                lo = beta;
                beta = if hi.is_infinite() { beta * 2.0 } else { 0.5 * (beta + hi) };
            } else {
                hi = beta;
                beta = 0.5 * (beta + lo);
            }
            h = row_distribution(&d, i, beta, &mut row);
            converged = (h - target).abs() < ENTROPY_TOL;
            iter += 1;
        }
        for (dst, &v) in p.row_mut(i).iter_mut().zip(&row) {
            *dst = T::of(v);
        }
        bands.push(Bandwidth { beta, entropy: h, converged });
    }
    (p, bands)
}

#[derive(Debug, Clone)]
pub struct Affinities<T> {
    /// Symmetric joint affinities summing to one, zero diagonal.
    pub p: Matrix<T>,
    pub bandwidths: Vec<Bandwidth>,
}

impl<T> Affinities<T> {
    pub fn unconverged_rows(&self) -> Vec<usize> {
        self.bandwidths.iter().enumerate().filter(|(_, b)| !b.converged).map(|(i, _)| i).collect()
    }
}

pub fn joint_affinities<T: Scalar>(x: &Matrix<T>, perplexity: f64) -> Result<Affinities<T>> {
    let n = x.rows();
    let dist = pairwise_sq_distances(x);
    if dist.data().iter().all(|&v| v == T::zero()) {
        return Err(Error::DegenerateGeometry("all input points coincide".into()));
    }
    let (cond, bandwidths) = conditional_affinities(&dist, perplexity);
    let denom = T::of_usize(2 * n);
    let p = Matrix::from_fn(n, n, |i, j| (cond[(i, j)] + cond[(j, i)]) / denom);
    Ok(Affinities { p, bandwidths })
}

/// `KL(P || Q)` for the Student-t affinities `Q` of layout `y`.
pub fn kl_divergence<T: Scalar>(p: &Matrix<T>, y: &Matrix<T>) -> T {
    let n = y.rows();
    let num = student_kernel(y);
    let z: T = num.data().iter().copied().sum();
    let tiny = T::of(1e-300_f64.max(f64::MIN_POSITIVE));
    let mut kl = T::zero();
    for i in 0..n {
        for j in 0..n {
            let pij = p[(i, j)];
            if i != j && pij > T::zero() {
                let qij = (num[(i, j)] / z).max(tiny);
                kl += pij * (pij / qij).ln();
            }
        }
    }
    kl
}

/// `1 / (1 + |y_i - y_j|^2)` off the diagonal, zero on it.
fn student_kernel<T: Scalar>(y: &Matrix<T>) -> Matrix<T> {
    let mut d = pairwise_sq_distances(y);
    let n = y.rows();
    for i in 0..n {
        for j in 0..n {
            d[(i, j)] = if i == j { T::zero() } else { T::one() / (T::one() + d[(i, j)]) };
        }
    }
    d
}

#[derive(Debug, Clone)]
pub struct Projection2D<T> {
    /// `N x 2` layout.
    pub points: Matrix<T>,
    pub labels: Vec<Tower>,
    pub kl: T,
    /// KL divergence right after the early-exaggeration phase.
    pub kl_after_exaggeration: Option<T>,
    pub unconverged_rows: Vec<usize>,
}

pub fn tsne<T: Scalar>(x: &Matrix<T>, labels: &[Tower], cfg: &TsneConfig) -> Result<Projection2D<T>> {
    let n = x.rows();
    cfg.validate(n)?;
    if labels.len() != n {
        return Err(Error::shape("tsne", format!("{} labels for {n} points", labels.len())));
    }
    let aff = joint_affinities(x, cfg.perplexity)?;
    let p = &aff.p;

    let mut rng = Rng::new(cfg.seed);
    let mut y = Matrix::from_fn(n, 2, |_, _| T::of(rng.normal() * cfg.init_std));
    let mut update = Matrix::<T>::zeros(n, 2);
    let mut gains = Matrix::from_fn(n, 2, |_, _| T::one());
    let lr = T::of(cfg.learning_rate);
    let min_gain = T::of(0.01);
    let four = T::of(4.0);
    let mut kl_after = None;

    for it in 0..cfg.iterations {
        let exaggerating = it < cfg.exaggeration_iters;
        let exag = T::of(if exaggerating { cfg.early_exaggeration } else { 1.0 });
        let momentum = T::of(if exaggerating { cfg.momentum } else { cfg.final_momentum });
        let num = student_kernel(&y);
        let z: T = num.data().iter().copied().sum();
        for i in 0..n {
            let (mut gx, mut gy) = (T::zero(), T::zero());
            for j in 0..n {
                if i == j {
                    continue;
                }
                let w = (exag * p[(i, j)] - num[(i, j)] / z) * num[(i, j)];
                gx += w * (y[(i, 0)] - y[(j, 0)]);
                gy += w * (y[(i, 1)] - y[(j, 1)]);
            }
            for (c, g) in [(0, four * gx), (1, four * gy)] {
                let same_sign = (g > T::zero()) == (update[(i, c)] > T::zero());
                let gain = if same_sign { gains[(i, c)] * T::of(0.8) } else { gains[(i, c)] + T::of(0.2) };
                gains[(i, c)] = gain.max(min_gain);
                update[(i, c)] = momentum * update[(i, c)] - lr * gains[(i, c)] * g;
            }
        }
        for i in 0..n {
            y[(i, 0)] += update[(i, 0)];
            y[(i, 1)] += update[(i, 1)];
        }
        let nn = T::of_usize(n);
        for c in 0..2 {
            let mean = (0..n).map(|i| y[(i, c)]).sum::<T>() / nn;
            (0..n).for_each(|i| y[(i, c)] -= mean);
        }
        if !y.is_finite() {
            return Err(Error::NonFinite("t-SNE descent"));
        }
        if it + 1 == cfg.exaggeration_iters {
            kl_after = Some(kl_divergence(p, &y));
        }
    }
    let kl = kl_divergence(p, &y);
    Ok(Projection2D { points: y, labels: labels.to_vec(), kl, kl_after_exaggeration: kl_after, unconverged_rows: aff.unconverged_rows() })
}
