//! Built-in invariant suites. The kernels under test are passed in so a
//! deliberately broken implementation can be checked to fail.

use std::time::Instant;

use rand::Rng;
use shampoo_kron::curvature::{
    assemble, batch_covariance, empirical_fisher, gn_curvature, opt_kron_factors, real_label_batch_ensemble,
    shampoo_dominance, shampoo_sq_factors, AdagradAccumulator, Expectation,
};
use shampoo_kron::data::{parse_idx, synth_gaussian_classes, Dataset, Normalization};
use shampoo_kron::kronalg::{
    inverse_rearrange, kron, kron_matvec, nkp_power_iteration, rearrange, vec, Damping, KronFactors,
    RearrangedMatrix,
};
use shampoo_kron::linalg::DenseMatrix;
use shampoo_kron::metrics::{cosine_similarity_kron, identity_minimax_check, probe_cosine, spectrum_report, ProbeBank};
use shampoo_kron::models::{
    empirical_fisher_ensemble, GradientEnsemble, LabelMode, Model, ModelConfig, ModelKind, WeightedGradient,
};
use shampoo_kron::optim::precondition;
use shampoo_kron::seed::{self, Rng as SeededRng};

use crate::config::{EstimatorSpec, ExperimentConfig};
use crate::experiments::run_figure1;
use crate::output::render_csv;

pub type Outcome = Result<String, String>;

/// Implementations exercised by the suites.
#[derive(Clone, Copy)]
pub struct Kernels {
    pub rearrange: fn(&DenseMatrix, usize, usize) -> shampoo_kron::Result<RearrangedMatrix>,
    pub shampoo_sq: fn(&GradientEnsemble) -> KronFactors,
}

impl Default for Kernels {
    fn default() -> Self {
        Self {
            rearrange,
            shampoo_sq: shampoo_sq_factors,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: &'static str,
    pub outcome: Outcome,
    pub seconds: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.outcome.is_ok()
    }
}

fn rng(seed_value: u64, index: u64) -> SeededRng {
    seed::stream(seed_value, "selftest", index)
}

fn random_matrix(r: usize, c: usize, g: &mut impl Rng) -> DenseMatrix {
    DenseMatrix::from_fn(r, c, |_, _| g.random_range(-1.0..1.0))
}

fn random_spd(n: usize, g: &mut impl Rng) -> DenseMatrix {
    let a = random_matrix(n, n, g);
    let mut s = a.matmul(&a.transpose()).expect("square");
    s.add_scaled(1.0, &DenseMatrix::identity(n)).expect("square");
    s.symmetrized()
}

/// `count` samples, each a sum of `rank` random outer products, with random
/// positive weights.
fn random_ensemble(m: usize, n: usize, rank: usize, count: usize, g: &mut impl Rng) -> GradientEnsemble {
    let mut samples: Vec<WeightedGradient> = (0..count)
        .map(|_| WeightedGradient {
            grad: random_matrix(m, rank, g).matmul(&random_matrix(rank, n, g)).expect("inner dims agree"),
            weight: g.random_range(0.1..1.0),
        })
        .collect();
    let total: f64 = samples.iter().map(|s| s.weight).sum();
    samples.iter_mut().for_each(|s| s.weight /= total);
    GradientEnsemble::new(m, n, samples).expect("valid ensemble")
}

fn max_abs_diff(a: &DenseMatrix, b: &DenseMatrix) -> f64 {
    a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// `max|a − b| / max|b|`
fn rel_max(a: &DenseMatrix, b: &DenseMatrix) -> f64 {
    if a.shape() != b.shape() {
        return f64::INFINITY;
    }
    max_abs_diff(a, b) / b.max_abs().max(f64::MIN_POSITIVE)
}

fn vec_rel(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    diff / b.iter().fold(0.0f64, |m, y| m.max(y.abs())).max(f64::MIN_POSITIVE)
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn core<T>(r: shampoo_kron::Result<T>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

/// Shampoo² factors equal one power-iteration round from the identity.
pub fn shampoo_sq_is_power_step(k: &Kernels, count: usize, seed_value: u64) -> Outcome {
    let mut g = rng(seed_value, 1);
    let mut worst: f64 = 0.0;
    for i in 0..count {
        let (m, n) = (g.random_range(1..=6), g.random_range(1..=6));
        let rank = g.random_range(1..=m.min(n));
        let size = g.random_range(1..=8);
        let e = random_ensemble(m, n, rank, size, &mut g);
        let sq = (k.shampoo_sq)(&e);
        let h = assemble(&e);
        let pi = core(nkp_power_iteration(&h.h, m, n, 1, &KronFactors::identity(m, n)))?;
        let err = rel_max(&sq.left, &pi.left).max(rel_max(&sq.right, &pi.right));
        worst = worst.max(err);
        ensure(err <= 1e-12, || format!("instance {i} ({m}x{n}): relative error {err:.3e}"))?;
    }
    Ok(format!("{count} ensembles, max relative error {worst:.2e}"))
}

/// `(A⊗B)·vec(G) = vec(B G Aᵀ)`.
pub fn kron_matvec_identity(count: usize, seed_value: u64) -> Outcome {
    let mut g = rng(seed_value, 2);
    let mut worst: f64 = 0.0;
    for i in 0..count {
        let (m, n) = (g.random_range(1..=6), g.random_range(1..=6));
        let a = random_matrix(n, n, &mut g);
        let b = random_matrix(m, m, &mut g);
        let x = random_matrix(m, n, &mut g);
        let fast = core(kron_matvec(&a, &b, &vec(&x)))?;
        let dense = core(kron(&a, &b).matvec(&vec(&x)))?;
        let direct = vec(&core(b.matmul(&x).and_then(|bx| bx.matmul(&a.transpose())))?);
        let err = vec_rel(&fast, &dense).max(vec_rel(&direct, &dense));
        worst = worst.max(err);
        ensure(err <= 1e-12, || format!("instance {i}: relative error {err:.3e}"))?;
    }
    Ok(format!("{count} instances, max relative error {worst:.2e}"))
}

/// Rearranging `B⊗A` gives the rank-one `vec(A)vec(B)ᵀ`, and the
/// rearrangement inverts exactly.
pub fn rearrangement_rank_one(k: &Kernels, count: usize, seed_value: u64) -> Outcome {
    let mut g = rng(seed_value, 3);
    let mut worst: f64 = 0.0;
    for i in 0..count {
        let (m, n) = (g.random_range(1..=6), g.random_range(1..=6));
        let a = random_matrix(m, m, &mut g);
        let b = random_matrix(n, n, &mut g);
        let hat = core((k.rearrange)(&kron(&b, &a), m, n))?;
        let expect = DenseMatrix::outer(&vec(&a), &vec(&b));
        let err = rel_max(hat.matrix(), &expect);
        worst = worst.max(err);
        ensure(err <= 1e-12, || format!("instance {i} ({m}x{n}): relative error {err:.3e}"))?;
        let h = random_matrix(m * n, m * n, &mut g);
        let back = inverse_rearrange(&core((k.rearrange)(&h, m, n))?);
        ensure(back == h, || format!("instance {i}: rearrangement does not invert"))?;
    }
    Ok(format!("{count} instances, max relative error {worst:.2e}"))
}

/// `‖H − B⊗A‖_F = ‖R(H) − vec(A)vec(B)ᵀ‖_F`.
pub fn rearranged_residual(k: &Kernels, count: usize, seed_value: u64) -> Outcome {
    let mut g = rng(seed_value, 4);
    let mut worst: f64 = 0.0;
    for i in 0..count {
        let (m, n) = (g.random_range(1..=6), g.random_range(1..=6));
        let h = random_matrix(m * n, m * n, &mut g);
        let a = random_matrix(m, m, &mut g);
        let b = random_matrix(n, n, &mut g);
        let lhs = core(h.sub(&kron(&b, &a)))?.frobenius_norm();
        let hat = core((k.rearrange)(&h, m, n))?;
        let rhs = core(hat.matrix().sub(&DenseMatrix::outer(&vec(&a), &vec(&b))))?.frobenius_norm();
        let err = (lhs - rhs).abs() / lhs.max(f64::MIN_POSITIVE);
        worst = worst.max(err);
        ensure(err <= 1e-12, || format!("instance {i}: {lhs} vs {rhs}"))?;
    }
    Ok(format!("{count} instances, max relative error {worst:.2e}"))
}

/// `r·E[GGᵀ]^{1/2}⊗E[GᵀG]^{1/2} ⪰ E[ggᵀ]` and the damped Adagrad form.
pub fn dominance(count: usize, seed_value: u64) -> Outcome {
    let mut g = rng(seed_value, 5);
    let mut worst = f64::INFINITY;
    for i in 0..count {
        let (m, n) = (g.random_range(1..=5), g.random_range(1..=5));
        let rank = g.random_range(1..=m.min(n));
        let e = random_ensemble(m, n, rank, g.random_range(1..=6), &mut g);
        let chk = core(shampoo_dominance(&e))?;
        ensure(chk.holds(), || format!("ensemble {i}: {chk:?}"))?;
        ensure(chk.rank_bound <= rank, || format!("ensemble {i}: rank {} > {rank}", chk.rank_bound))?;
        worst = worst.min(chk.min_eigenvalue / chk.trace);

        let mut acc = core(AdagradAccumulator::new(m, n, true))?;
        for _ in 0..g.random_range(1..=8) {
            core(acc.update(&random_matrix(m, n, &mut g)))?;
        }
        for eps in [0.0, 1e-3, 1.0] {
            let chk = core(acc.dominance(eps))?;
            ensure(chk.holds(), || format!("stream {i}, eps {eps}: {chk:?}"))?;
            worst = worst.min(chk.min_eigenvalue / chk.trace);
        }
    }
    Ok(format!("{count} ensembles and {count} streams, min λ/trace {worst:.2e}"))
}

fn tiny_problem(kind: ModelKind, seed_value: u64) -> (Model, Dataset) {
    let c = if kind == ModelKind::BinaryLogistic { 2 } else { 3 };
    let cfg = ModelConfig {
        kind,
        input_dim: 3,
        hidden_dim: 2,
        num_classes: c,
        probe_layer: 0,
        activation: shampoo_kron::models::Activation::Tanh,
        init_seed: seed_value,
    };
    let model = Model::new(cfg).expect("valid model");
    let mut ds = synth_gaussian_classes(3, c, 6 / c, 1.5, seed_value + 100).expect("valid dataset");
    ds.labels.rotate_left(1);
    (model, ds)
}

/// Sampled-label batches: `|B|·E[G_B G_Bᵀ]` equals the per-example Fisher,
/// exactly by enumeration and within 3 standard errors by Monte Carlo.
pub fn batch_invariance(trials: usize, seed_value: u64) -> Outcome {
    let mut worst: f64 = 0.0;
    for (kind, s) in [(ModelKind::MultinomialLinear, 1), (ModelKind::Mlp2, 2), (ModelKind::BinaryLogistic, 3)] {
        let (model, ds) = tiny_problem(kind, seed_value.wrapping_add(s));
        let h = core(gn_curvature(&model, &ds))?;
        for b in 1..=3 {
            let cov = core(batch_covariance(&model, &ds, b, LabelMode::Sampled, Expectation::Enumerated))?;
            let err = max_abs_diff(&cov.curvature.h, &h.h) / h.h.max_abs().max(1.0);
            worst = worst.max(err);
            ensure(err <= 1e-12, || format!("{kind:?} |B|={b}: relative error {err:.3e}"))?;
        }
    }
    let mut z_max: f64 = 0.0;
    let (model, ds) = tiny_problem(ModelKind::MultinomialLinear, seed_value.wrapping_add(6));
    let h = core(gn_curvature(&model, &ds))?;
    for b in 1..=3 {
        let cov = core(batch_covariance(
            &model,
            &ds,
            b,
            LabelMode::Sampled,
            Expectation::MonteCarlo { trials, seed: seed_value.wrapping_add(7) },
        ))?;
        let se = cov.frobenius_stderr.unwrap_or(0.0);
        let err = core(cov.curvature.h.sub(&h.h))?.frobenius_norm();
        z_max = z_max.max(err / se);
        ensure(err <= 3.0 * se, || format!("Monte Carlo |B|={b}: error {err:.3e} > 3·{se:.3e}"))?;
    }
    Ok(format!("enumerated max error {worst:.2e}; Monte Carlo T={trials} max z {z_max:.2}"))
}

/// Real-label batches: `E[G_B G_Bᵀ] = EF/|B| + (1 − 1/|B|)·ḡḡᵀ`.
pub fn interpolation(seed_value: u64) -> Outcome {
    let mut worst: f64 = 0.0;
    for (kind, s) in [(ModelKind::MultinomialLinear, 4), (ModelKind::Mlp2, 5), (ModelKind::BinaryLogistic, 6)] {
        let (model, ds) = tiny_problem(kind, seed_value.wrapping_add(s));
        let ef = core(empirical_fisher(&model, &ds))?;
        let ens = core(empirical_fisher_ensemble(&model, &ds))?;
        let (m, n) = ens.shape();
        let mut mean = DenseMatrix::zeros(m, n);
        for smp in ens.samples() {
            core(mean.add_scaled(smp.weight, &smp.grad))?;
        }
        let mv = vec(&mean);
        let outer = DenseMatrix::outer(&mv, &mv);
        for b in 1..=3 {
            let bf = b as f64;
            let cov = core(batch_covariance(&model, &ds, b, LabelMode::Real, Expectation::Enumerated))?;
            let mut expect = ef.h.scale(1.0 / bf);
            core(expect.add_scaled(1.0 - 1.0 / bf, &outer))?;
            let scale = expect.max_abs().max(1.0);
            let err = max_abs_diff(&cov.curvature.h, &expect) / scale;
            let closed = core(real_label_batch_ensemble(&model, &ds, b))?;
            let err2 = max_abs_diff(&assemble(&closed).h, &cov.curvature.h) / scale;
            worst = worst.max(err).max(err2);
            ensure(err <= 1e-12 && err2 <= 1e-12, || {
                format!("{kind:?} |B|={b}: errors {err:.3e}, {err2:.3e}")
            })?;
        }
    }
    Ok(format!("max relative error {worst:.2e}"))
}

/// Probe-based cosine against the exact value, and the running Adagrad
/// probe products against the dense sum.
pub fn probe_machinery(instances: usize, probes: usize, seed_value: u64) -> Outcome {
    let mut g = rng(seed_value, 8);
    let mut worst: f64 = 0.0;
    for i in 0..instances {
        let e = random_ensemble(8, 8, 2, 12, &mut g);
        let mut h = assemble(&e);
        let k = shampoo_sq_factors(&e);
        let exact = core(cosine_similarity_kron(&k, &h))?;
        let est = core(probe_cosine(&mut h, &k, probes, seed_value.wrapping_add(500 + i as u64), None))?;
        worst = worst.max((est - exact).abs());
        ensure((est - exact).abs() <= 0.05, || format!("instance {i}: {est} vs exact {exact}"))?;
    }
    let (m, n) = (6, 5);
    let mut bank = core(ProbeBank::new(m * n, 30, seed_value.wrapping_add(46)))?;
    let mut acc = core(AdagradAccumulator::new(m, n, true))?;
    for _ in 0..40 {
        let grad = random_matrix(m, n, &mut g);
        core(bank.adagrad_hv(&vec(&grad)))?;
        core(acc.update(&grad))?;
    }
    let dense = acc.exact().expect("tracked");
    let mut bank_err: f64 = 0.0;
    for (v, hv) in bank.probes().iter().zip(bank.products()) {
        let d = core(dense.h.matvec(v))?;
        let num: f64 = d.iter().zip(hv).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let den: f64 = d.iter().map(|a| a * a).sum::<f64>().sqrt();
        bank_err = bank_err.max(num / den);
    }
    ensure(bank_err <= 1e-10, || format!("Adagrad probe products off by {bank_err:.3e}"))?;
    Ok(format!(
        "{instances} instances at K={probes}, max |Δcos| {worst:.3}; Adagrad products {bank_err:.1e}"
    ))
}

/// Minimax optimality of the identity start, and PSD top singular factors.
pub fn identity_init(samples: usize, instances: usize, seed_value: u64) -> Outcome {
    let rep = core(identity_minimax_check(8, samples, seed_value))?;
    ensure(rep.passed(), || format!("minimax: {rep:?}"))?;
    let mut g = rng(seed_value, 9);
    for i in 0..instances {
        let (m, n) = (g.random_range(2..=5), g.random_range(2..=5));
        let e = random_ensemble(m, n, g.random_range(1..=m.min(n)), g.random_range(2..=8), &mut g);
        let rep = core(spectrum_report(&assemble(&e)))?;
        ensure(rep.u1.is_semidefinite(1e-10) && rep.v1.is_semidefinite(1e-10), || {
            format!("instance {i}: top factors not semidefinite ({:?}, {:?})", rep.u1, rep.v1)
        })?;
    }
    Ok(format!("minimax on {samples} samples; {instances} top singular pairs semidefinite"))
}

/// `L^{−q} G R^{−q}` equals `(L²)^{−q/2} G (R²)^{−q/2}`.
pub fn grafting(count: usize, seed_value: u64) -> Outcome {
    let mut g = rng(seed_value, 10);
    let mut worst: f64 = 0.0;
    for i in 0..count {
        let (m, n) = (g.random_range(2..=6), g.random_range(2..=6));
        let l = random_spd(m, &mut g);
        let r = random_spd(n, &mut g);
        let grad = random_matrix(m, n, &mut g);
        let q = [0.25, 0.5, 1.0][i % 3];
        let a = core(precondition(&l, &r, &grad, q, Damping::Fixed(0.0)))?;
        let l2 = core(l.matmul(&l))?.symmetrized();
        let r2 = core(r.matmul(&r))?.symmetrized();
        let b = core(precondition(&l2, &r2, &grad, q / 2.0, Damping::Fixed(0.0)))?;
        let err = core(a.sub(&b))?.frobenius_norm() / a.frobenius_norm();
        worst = worst.max(err);
        ensure(err <= 1e-8, || format!("pair {i}: relative error {err:.3e}"))?;
    }
    Ok(format!("{count} SPD pairs, max relative error {worst:.2e}"))
}

/// More power-iteration rounds never lower the cosine.
pub fn als_monotone(count: usize, seed_value: u64) -> Outcome {
    let mut g = rng(seed_value, 11);
    for i in 0..count {
        let (m, n) = (g.random_range(2..=5), g.random_range(2..=5));
        let e = random_ensemble(m, n, 2.min(m.min(n)), g.random_range(2..=8), &mut g);
        let h = assemble(&e);
        let mut prev = core(cosine_similarity_kron(&shampoo_sq_factors(&e), &h))?;
        for k in 2..=6 {
            let c = core(cosine_similarity_kron(&core(opt_kron_factors(&h, k))?, &h))?;
            ensure(c >= prev - 1e-12, || format!("instance {i}: cos fell from {prev} to {c} at k={k}"))?;
            prev = c;
        }
    }
    Ok(format!("{count} instances"))
}

/// Analytic per-layer gradients against central differences.
pub fn gradients(seed_value: u64) -> Outcome {
    let mut g = rng(seed_value, 12);
    let mut worst: f64 = 0.0;
    for kind in [ModelKind::BinaryLogistic, ModelKind::MultinomialLinear, ModelKind::Mlp2] {
        let (model, _) = tiny_problem(kind, seed_value.wrapping_add(20));
        let x: Vec<f64> = (0..3).map(|_| g.random_range(-1.5..1.5)).collect();
        let y = g.random_range(0..model.num_classes());
        let analytic = core(model.gradients(&x, y))?;
        for (l, ga) in analytic.iter().enumerate() {
            let mut num = DenseMatrix::zeros(ga.rows(), ga.cols());
            for i in 0..ga.rows() {
                for j in 0..ga.cols() {
                    let mut plus = model.clone();
                    plus.weights_mut()[l][(i, j)] += 1e-5;
                    let mut minus = model.clone();
                    minus.weights_mut()[l][(i, j)] -= 1e-5;
                    num[(i, j)] = (core(plus.loss(&x, y))? - core(minus.loss(&x, y))?) / 2e-5;
                }
            }
            let err = core(ga.sub(&num))?.frobenius_norm() / ga.frobenius_norm().max(num.frobenius_norm()).max(1e-8);
            worst = worst.max(err);
            ensure(err <= 1e-6, || format!("{kind:?} layer {l}: relative error {err:.3e}"))?;
        }
    }
    Ok(format!("max relative error {worst:.2e}"))
}

/// IDX round trip and rejection of malformed input.
pub fn idx_format() -> Outcome {
    let pixels: Vec<f64> = (0..2 * 3 * 4).map(|v| f64::from(v * 10 % 256) / 255.0).collect();
    let mut ds = core(Dataset::new(core(DenseMatrix::from_row_major(4, 6, pixels))?, vec![0, 1, 2, 1], 3))?;
    ds.image_shape = Some((2, 3));
    ds.normalization = Normalization::Scale255;
    let (img, lab) = core(ds.to_idx_bytes())?;
    let back = core(parse_idx(&img, &lab, Normalization::Scale255))?;
    ensure(back.labels == ds.labels, || "labels differ after round trip".into())?;
    ensure(max_abs_diff(&back.inputs, &ds.inputs) <= 1e-12, || "pixels differ after round trip".into())?;
    let mut bad = img.clone();
    bad[3] = 0x01;
    ensure(parse_idx(&bad, &lab, Normalization::None).is_err(), || "bad magic accepted".into())?;
    ensure(parse_idx(&img[..img.len() - 1], &lab, Normalization::None).is_err(), || {
        "truncated file accepted".into()
    })?;
    ensure(parse_idx(&img, &lab[..lab.len() - 1], Normalization::None).is_err(), || {
        "count mismatch accepted".into()
    })?;
    Ok("round trip and malformed inputs".into())
}

/// Logistic regression has a rank-one rearranged curvature, so Shampoo²
/// is exact along a short training run.
pub fn binary_flat_line(seed_value: u64) -> Outcome {
    let mut cfg = crate::builtin_config("binary").map_err(|e| e.to_string())?;
    cfg.model.input_dim = 16;
    if let crate::config::DatasetSpec::Synth(s) = &mut cfg.dataset {
        s.dim = 16;
        s.per_class = 20;
    }
    cfg.train.steps = 10;
    cfg.train.probe_schedule = (0..=10).collect();
    cfg.apply_seed(Some(seed_value));
    let rows = run_figure1(&cfg).map_err(|e| e.to_string())?;
    let sq = EstimatorSpec::ShampooSq.name();
    let mut worst: f64 = 1.0;
    for r in rows.iter().filter(|r| r.estimator == sq || r.estimator.starts_with("opt_kron")) {
        worst = worst.min(r.cosine);
        ensure(r.cosine >= 1.0 - 1e-8, || {
            format!("step {:?} {} {}: cosine {}", r.step, r.target, r.estimator, r.cosine)
        })?;
    }
    Ok(format!("min cosine {worst:.12}"))
}

/// Two identical runs render identical CSV bytes.
pub fn determinism(seed_value: u64) -> Outcome {
    let mut cfg: ExperimentConfig = crate::builtin_config("figure1").map_err(|e| e.to_string())?;
    cfg.train.steps = 4;
    cfg.apply_seed(Some(seed_value));
    let a = render_csv(&run_figure1(&cfg).map_err(|e| e.to_string())?);
    let b = render_csv(&run_figure1(&cfg).map_err(|e| e.to_string())?);
    ensure(a == b, || "CSV output differs between identical runs".into())?;
    Ok(format!("{} bytes identical", a.len()))
}

type Suite = (&'static str, Box<dyn Fn(&Kernels) -> Outcome>);

pub fn suites(seed_value: u64) -> Vec<Suite> {
    let s = seed_value;
    vec![
        ("kron_matvec", Box::new(move |_| kron_matvec_identity(200, s))),
        ("rearrangement_rank_one", Box::new(move |k| rearrangement_rank_one(k, 200, s))),
        ("rearranged_residual", Box::new(move |k| rearranged_residual(k, 200, s))),
        ("shampoo_sq_power_step", Box::new(move |k| shampoo_sq_is_power_step(k, 500, s))),
        ("als_monotone", Box::new(move |_| als_monotone(50, s))),
        ("psd_dominance", Box::new(move |_| dominance(100, s))),
        ("batch_invariance", Box::new(move |_| batch_invariance(2000, s))),
        ("batch_interpolation", Box::new(move |_| interpolation(s))),
        ("probe_machinery", Box::new(move |_| probe_machinery(20, 200, s))),
        ("identity_initialization", Box::new(move |_| identity_init(10_000, 100, s))),
        ("exponent_grafting", Box::new(move |_| grafting(100, s))),
        ("gradients", Box::new(move |_| gradients(s))),
        ("idx_format", Box::new(|_| idx_format())),
        ("binary_flat_line", Box::new(move |_| binary_flat_line(s))),
        ("determinism", Box::new(move |_| determinism(s))),
    ]
}

/// Runs every suite, or those whose name contains `filter`.
pub fn run(kernels: &Kernels, seed_value: u64, filter: Option<&str>) -> Vec<CheckResult> {
    suites(seed_value)
        .into_iter()
        .filter(|(name, _)| filter.is_none_or(|f| name.contains(f)))
        .map(|(name, f)| {
            let start = Instant::now();
            let outcome = f(kernels);
            CheckResult {
                name,
                outcome,
                seconds: start.elapsed().as_secs_f64(),
            }
        })
        .collect()
}
