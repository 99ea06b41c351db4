mod common;

use common::*;
use shampoo_kron::curvature::{
    assemble, batch_covariance, empirical_fisher, gn_curvature, real_label_batch_ensemble, shampoo_sq_factors,
    Expectation,
};
use shampoo_kron::error::Error;
use shampoo_kron::linalg::DenseMatrix;
use shampoo_kron::models::{empirical_fisher_ensemble, LabelMode, ModelKind};

fn tiny(kind: ModelKind, seed: u64) -> (shampoo_kron::models::Model, shampoo_kron::data::Dataset) {
    let c = if kind == ModelKind::BinaryLogistic { 2 } else { 3 };
    let m = model(kind, 3, 2, c, 0, seed);
    let mut ds = dataset(3, c, 6 / c, seed + 100);
    // break the class-major ordering so tuples mix labels
    ds.labels.rotate_left(1);
    (m, ds)
}

#[test]
fn sampled_label_batches_are_size_invariant() {
    for (kind, seed) in [(ModelKind::MultinomialLinear, 1), (ModelKind::Mlp2, 2), (ModelKind::BinaryLogistic, 3)] {
        let (model, ds) = tiny(kind, seed);
        let h = gn_curvature(&model, &ds).unwrap();
        for b in 1..=3 {
            let cov = batch_covariance(&model, &ds, b, LabelMode::Sampled, Expectation::Enumerated).unwrap();
            let err = max_abs_diff(&cov.curvature.h, &h.h);
            assert!(err <= 1e-12 * h.h.max_abs().max(1.0), "{kind:?} |B|={b} err={err}");
        }
    }
}

#[test]
fn real_label_batches_interpolate() {
    for (kind, seed) in [(ModelKind::MultinomialLinear, 4), (ModelKind::Mlp2, 5)] {
        let (model, ds) = tiny(kind, seed);
        let ef = empirical_fisher(&model, &ds).unwrap();
        let ens = empirical_fisher_ensemble(&model, &ds).unwrap();
        let (m, n) = ens.shape();
        let mut mean = DenseMatrix::zeros(m, n);
        for s in ens.samples() {
            mean.add_scaled(s.weight, &s.grad).unwrap();
        }
        let mv = shampoo_kron::kronalg::vec(&mean);
        let outer = DenseMatrix::outer(&mv, &mv);
        for b in 1..=3 {
            let bf = b as f64;
            let cov = batch_covariance(&model, &ds, b, LabelMode::Real, Expectation::Enumerated).unwrap();
            let mut expect = ef.h.scale(1.0 / bf);
            expect.add_scaled(1.0 - 1.0 / bf, &outer).unwrap();
            let err = max_abs_diff(&cov.curvature.h, &expect);
            assert!(err <= 1e-12 * expect.max_abs().max(1.0), "|B|={b} err={err}");
            if b == 1 {
                assert!(max_abs_diff(&cov.curvature.h, &ef.h) <= 1e-12);
            }
            // closed-form ensemble agrees, including its Shampoo² factors
            let closed = real_label_batch_ensemble(&model, &ds, b).unwrap();
            assert!(max_abs_diff(&assemble(&closed).h, &cov.curvature.h) <= 1e-12);
            let a = shampoo_sq_factors(&closed);
            let e = shampoo_sq_factors(&cov.ensemble);
            assert!(max_abs_diff(&a.left, &e.left) <= 1e-12);
            assert!(max_abs_diff(&a.right, &e.right) <= 1e-12);
        }
    }
}

#[test]
fn monte_carlo_batches_within_three_standard_errors() {
    let (model, ds) = tiny(ModelKind::MultinomialLinear, 6);
    let h = gn_curvature(&model, &ds).unwrap();
    for b in [1, 2, 3] {
        let cov = batch_covariance(
            &model,
            &ds,
            b,
            LabelMode::Sampled,
            Expectation::MonteCarlo { trials: 2000, seed: 7 },
        )
        .unwrap();
        let se = cov.frobenius_stderr.unwrap();
        let err = cov.curvature.h.sub(&h.h).unwrap().frobenius_norm();
        assert!(err <= 3.0 * se, "|B|={b} err={err} se={se}");
    }
    let real = batch_covariance(&model, &ds, 2, LabelMode::Real, Expectation::MonteCarlo { trials: 2000, seed: 8 })
        .unwrap();
    let exact = batch_covariance(&model, &ds, 2, LabelMode::Real, Expectation::Enumerated).unwrap();
    let err = real.curvature.h.sub(&exact.curvature.h).unwrap().frobenius_norm();
    assert!(err <= 3.0 * real.frobenius_stderr.unwrap());
}

#[test]
fn enumeration_limits_are_enforced() {
    let model = model(ModelKind::MultinomialLinear, 3, 0, 3, 0, 9);
    let big = dataset(3, 3, 3, 10);
    let r = batch_covariance(&model, &big, 2, LabelMode::Sampled, Expectation::Enumerated);
    assert!(matches!(r, Err(Error::EnumerationLimit(_))));
    let (model, ds) = tiny(ModelKind::MultinomialLinear, 11);
    let r = batch_covariance(&model, &ds, 4, LabelMode::Real, Expectation::Enumerated);
    assert!(matches!(r, Err(Error::EnumerationLimit(_))));
    let four = model_with_classes(4);
    let r = batch_covariance(&four.0, &four.1, 1, LabelMode::Sampled, Expectation::Enumerated);
    assert!(matches!(r, Err(Error::EnumerationLimit(_))));
}

fn model_with_classes(c: usize) -> (shampoo_kron::models::Model, shampoo_kron::data::Dataset) {
    (model(ModelKind::MultinomialLinear, 3, 0, c, 0, 12), dataset(3, c, 1, 13))
}
