//! Analytic gradients against central finite differences.

mod common;

use common::*;
use duallab::encoder::{Architecture, ModelParams, TokenSeq, Tower, TowerConfig};
use duallab::numerics::{Matrix, Rng};

#[test]
fn loss_gradients_match_finite_differences() {
    let mut rng = Rng::new(2024);
    for (name, f, cfg) in loss_variants() {
        for b in [2, 8, 32] {
            let mut worst = 0.0f64;
            for _ in 0..20 {
                worst = worst.max(loss_fd_error(name, f, &cfg, b, 6, &mut rng));
            }
            assert!(worst < FD_REL_TOL, "{name} B={b}: relative error {worst:e}");
        }
    }
}

fn encoder_case(arch: Architecture, tower: Tower, seed: u64) -> f64 {
    let cfg = TowerConfig { architecture: arch, vocab_size: 12, embed_dim: 5, out_dim: 4 };
    let mut rng = Rng::new(seed);
    let params = ModelParams::<f64>::init(cfg, &mut rng).unwrap();
    let seqs: Vec<TokenSeq> = (0..4)
        .map(|_| {
            let len = 1 + rng.below(5);
            TokenSeq::new((0..len).map(|_| rng.below(12)).collect(), 12).unwrap()
        })
        .collect();
    let probe = Matrix::from_fn(4, 4, |_, _| rng.normal());
    let scalar = |p: &ModelParams<f64>| -> f64 {
        let e = p.encode_batch(tower, &seqs).unwrap();
        e.data().iter().zip(probe.data()).map(|(a, b)| a * b).sum()
    };
    let grads = params.encode_backward(tower, &seqs, &probe).unwrap();
    let mut worst = 0.0f64;
    let n_tensors = params.tensor_list().len();
    for t in 0..n_tensors {
        let base = params.tensor_list()[t].clone();
        let numeric = numeric_gradient(&base, FD_STEP, |x| {
            let mut p = params.clone();
            *p.tensor_list_mut()[t] = x.clone();
            scalar(&p)
        });
        worst = worst.max(max_rel_error(grads.tensor_list()[t], &numeric));
    }
    worst
}

#[test]
fn encoder_backward_matches_finite_differences() {
    for arch in [Architecture::Sde, Architecture::Ade, Architecture::AdeSpl] {
        for tower in [Tower::Query, Tower::Doc] {
            for seed in 0..4 {
                let err = encoder_case(arch, tower, seed);
                assert!(err < FD_REL_TOL, "{arch:?} {tower:?} seed {seed}: {err:e}");
            }
        }
    }
}

#[test]
fn shared_parameters_accumulate_both_towers() {
    let cfg = TowerConfig { architecture: Architecture::AdeSpl, vocab_size: 10, embed_dim: 3, out_dim: 3 };
    let mut rng = Rng::new(11);
    let params = ModelParams::<f64>::init(cfg, &mut rng).unwrap();
    let seqs = vec![TokenSeq::new(vec![1, 2], 10).unwrap()];
    let g = Matrix::from_rows(&[vec![0.5, -0.2, 0.9]]).unwrap();
    let gq = params.encode_backward(Tower::Query, &seqs, &g).unwrap();
    let gd = params.encode_backward(Tower::Doc, &seqs, &g).unwrap();
    let mut both = params.zeros_like();
    params.encode_backward_into(&mut both, Tower::Query, &seqs, &g).unwrap();
    params.encode_backward_into(&mut both, Tower::Doc, &seqs, &g).unwrap();
    let want = gq.proj(Tower::Query).add(gd.proj(Tower::Doc)).unwrap();
    assert!(both.proj(Tower::Query).max_abs_diff(&want) < 1e-15);
    assert_eq!(both.embed(Tower::Query), gq.embed(Tower::Query));
    assert_eq!(both.embed(Tower::Doc), gd.embed(Tower::Doc));
}
