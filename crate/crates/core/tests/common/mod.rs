#![allow(dead_code)]

pub mod oracles;

use duallab::losses::{
    bidirectional_loss, contrastive_loss, duplicate_mask, pair_loss, samtone_loss, similarity_matrices, LossConfig,
    LossResult, SamToNeMode, SimMatrices,
};
use duallab::numerics::{Matrix, Rng};
use duallab::Result;

pub const FD_STEP: f64 = 1e-5;
pub const FD_REL_TOL: f64 = 1e-6;

pub fn unit_rows(rng: &mut Rng, rows: usize, cols: usize) -> Matrix<f64> {
    Matrix::from_fn(rows, cols, |_, _| rng.normal()).l2_normalize_rows().unwrap()
}

/// Central differences of `f` at `x`, one coordinate at a time.
pub fn numeric_gradient(x: &Matrix<f64>, h: f64, mut f: impl FnMut(&Matrix<f64>) -> f64) -> Matrix<f64> {
    let mut g = Matrix::zeros(x.rows(), x.cols());
    let mut probe = x.clone();
    for k in 0..x.data().len() {
        let orig = probe.data()[k];
        probe.data_mut()[k] = orig + h;
        let up = f(&probe);
        probe.data_mut()[k] = orig - h;
        let down = f(&probe);
        probe.data_mut()[k] = orig;
        g.data_mut()[k] = (up - down) / (2.0 * h);
    }
    g
}

/// Worst per-entry `|a - n| / max(1, |a|, |n|)`.
pub fn max_rel_error(analytic: &Matrix<f64>, numeric: &Matrix<f64>) -> f64 {
    analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(&a, &n)| (a - n).abs() / 1f64.max(a.abs()).max(n.abs()))
        .fold(0.0, f64::max)
}

pub type LossFn = fn(&SimMatrices<f64>, &LossConfig) -> Result<LossResult<f64>>;

pub fn loss_variants() -> Vec<(&'static str, LossFn, LossConfig)> {
    let uni = LossConfig { bidirectional_base: false, ..LossConfig::default() };
    let bi = LossConfig { bidirectional_base: true, ..LossConfig::default() };
    vec![
        ("standard", contrastive_loss as LossFn, uni),
        ("bidirectional", bidirectional_loss, uni),
        ("samtone-query", samtone_loss, LossConfig { samtone_mode: SamToNeMode::QuerySide, ..uni }),
        ("samtone-query-bibase", samtone_loss, LossConfig { samtone_mode: SamToNeMode::QuerySide, ..bi }),
        ("samtone-bi", samtone_loss, LossConfig { samtone_mode: SamToNeMode::Bidirectional, ..bi }),
        (
            "samtone-bi-masked",
            samtone_loss,
            LossConfig { samtone_mode: SamToNeMode::Bidirectional, mask_duplicate_docs: true, ..bi },
        ),
        ("pair-0", pair_loss, LossConfig { pair_alpha: 0.0, ..uni }),
        ("pair-0.1", pair_loss, LossConfig { pair_alpha: 0.1, ..uni }),
        ("pair-1", pair_loss, LossConfig { pair_alpha: 1.0, ..uni }),
        ("pair-0.1-masked", pair_loss, LossConfig { pair_alpha: 0.1, mask_duplicate_docs: true, ..bi }),
    ]
}

/// Keys with planted duplicates so masking actually removes terms.
fn keys(b: usize, rng: &mut Rng) -> Vec<usize> {
    (0..b).map(|_| rng.below(b - b / 4)).collect()
}

fn eval(f: LossFn, cfg: &LossConfig, q: &Matrix<f64>, p: &Matrix<f64>, mask: &[bool]) -> Result<LossResult<f64>> {
    let s = similarity_matrices(q, p)?.with_duplicate_mask(mask.to_vec())?;
    f(&s, cfg)
}

pub fn loss_fd_error(name: &str, f: LossFn, cfg: &LossConfig, b: usize, dim: usize, rng: &mut Rng) -> f64 {
    let q = unit_rows(rng, b, dim);
    let p = unit_rows(rng, b, dim);
    let k = keys(b, rng);
    let mut mask = duplicate_mask(&k);
    if cfg.pair_alpha > 0.0 && cfg.mask_duplicate_docs {
        // PAIR needs one unmasked passage negative per row.
        for i in 0..b {
            if (0..b).all(|j| j == i || mask[i * b + j]) {
                mask.iter_mut().skip(i * b).take(b).for_each(|m| *m = false);
                (0..b).for_each(|r| mask[r * b + i] = false);
            }
        }
    }
    let res = eval(f, cfg, &q, &p, &mask).unwrap_or_else(|e| panic!("{name} B={b}: {e}"));
    let nq = numeric_gradient(&q, FD_STEP, |x| eval(f, cfg, x, &p, &mask).unwrap().loss);
    let np = numeric_gradient(&p, FD_STEP, |x| eval(f, cfg, &q, x, &mask).unwrap().loss);
    max_rel_error(&res.grad_q, &nq).max(max_rel_error(&res.grad_p, &np))
}
