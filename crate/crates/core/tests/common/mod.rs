#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use shampoo_kron::data::{synth_gaussian_classes, Dataset};
use shampoo_kron::linalg::DenseMatrix;
use shampoo_kron::models::{Activation, GradientEnsemble, Model, ModelConfig, ModelKind};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rows: usize, cols: usize, rng: &mut impl Rng) -> DenseMatrix {
    DenseMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

pub fn random_spd(n: usize, rng: &mut impl Rng) -> DenseMatrix {
    let a = random_matrix(n, n, rng);
    let mut s = a.gram_rows();
    for i in 0..n {
        s[(i, i)] += 0.1;
    }
    s
}

pub fn random_psd(n: usize, rank: usize, rng: &mut impl Rng) -> DenseMatrix {
    random_matrix(n, rank, rng).gram_rows()
}

pub fn random_ensemble(m: usize, n: usize, count: usize, rng: &mut impl Rng) -> GradientEnsemble {
    let grads = (0..count).map(|_| random_matrix(m, n, rng)).collect();
    GradientEnsemble::uniform(grads).unwrap()
}

/// Ensemble of rank-`r` samples with unequal weights.
pub fn weighted_low_rank_ensemble(m: usize, n: usize, r: usize, count: usize, rng: &mut impl Rng) -> GradientEnsemble {
    let mut raw: Vec<(DenseMatrix, f64)> = (0..count)
        .map(|_| {
            let g = random_matrix(m, r, rng).matmul(&random_matrix(r, n, rng)).unwrap();
            (g, rng.random_range(0.1..1.0))
        })
        .collect();
    let total: f64 = raw.iter().map(|s| s.1).sum();
    raw.iter_mut().for_each(|s| s.1 /= total);
    let samples = raw
        .into_iter()
        .map(|(grad, weight)| shampoo_kron::models::WeightedGradient { grad, weight })
        .collect();
    GradientEnsemble::new(m, n, samples).unwrap()
}

pub fn config(kind: ModelKind, d: usize, h: usize, c: usize, probe: usize, seed: u64) -> ModelConfig {
    ModelConfig {
        kind,
        input_dim: d,
        hidden_dim: h,
        num_classes: c,
        probe_layer: probe,
        activation: Activation::Tanh,
        init_seed: seed,
    }
}

pub fn model(kind: ModelKind, d: usize, h: usize, c: usize, probe: usize, seed: u64) -> Model {
    Model::new(config(kind, d, h, c, probe, seed)).unwrap()
}

pub fn dataset(d: usize, c: usize, per_class: usize, seed: u64) -> Dataset {
    synth_gaussian_classes(d, c, per_class, 1.5, seed).unwrap()
}

pub fn max_abs_diff(a: &DenseMatrix, b: &DenseMatrix) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

pub fn rel_diff(a: &DenseMatrix, b: &DenseMatrix) -> f64 {
    let scale = a.frobenius_norm().max(b.frobenius_norm()).max(f64::MIN_POSITIVE);
    a.sub(b).unwrap().frobenius_norm() / scale
}
