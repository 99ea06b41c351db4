//! A fixed zoo of small classifiers with hand-derived cross-entropy
//! gradients for one designated ("probe") weight matrix.
//!
//! Weight layouts, with `d` inputs, `h` hidden units and `C` classes:
//!
//! | kind                 | layer 0 | layer 1 |
//! |----------------------|---------|---------|
//! | `binary_logistic`    | `d×1`   |         |
//! | `multinomial_linear` | `C×d`   |         |
//! | `mlp2`               | `h×d`   | `C×h`   |
//!
//! No biases are used, so every per-sample gradient factors as an outer
//! product `G = δ·aᵀ` of a row-side vector `δ` and a column-side vector `a`.

use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{dim_mismatch, Error, Result};
use crate::linalg::DenseMatrix;
use crate::seed;

pub const MAX_PROBE_SIZE: usize = 1024;
pub const MAX_ENUMERATED_CLASSES: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    BinaryLogistic,
    MultinomialLinear,
    Mlp2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative; the ReLU subgradient at 0 is 0.
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - z.tanh().powi(2),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub input_dim: usize,
    #[serde(default)]
    pub hidden_dim: usize,
    pub num_classes: usize,
    #[serde(default)]
    pub probe_layer: usize,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default)]
    pub init_seed: u64,
}

impl ModelConfig {
    /// Shapes of every weight matrix, in layer order.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        match self.kind {
            ModelKind::BinaryLogistic => vec![(self.input_dim, 1)],
            ModelKind::MultinomialLinear => vec![(self.num_classes, self.input_dim)],
            ModelKind::Mlp2 => vec![
                (self.hidden_dim, self.input_dim),
                (self.num_classes, self.hidden_dim),
            ],
        }
    }

    pub fn probe_shape(&self) -> (usize, usize) {
        self.layer_shapes()[self.probe_layer]
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::InvalidArgument("input_dim must be positive".into()));
        }
        if self.num_classes < 2 {
            return Err(Error::InvalidArgument("need at least two classes".into()));
        }
        if self.kind == ModelKind::BinaryLogistic && self.num_classes != 2 {
            return Err(Error::InvalidArgument(
                "binary_logistic requires num_classes = 2".into(),
            ));
        }
        if self.kind == ModelKind::Mlp2 && self.hidden_dim == 0 {
            return Err(Error::InvalidArgument("mlp2 requires hidden_dim > 0".into()));
        }
        let layers = self.layer_shapes().len();
        if self.probe_layer >= layers {
            return Err(Error::InvalidArgument(format!(
                "probe_layer {} out of range for {layers} layer(s)",
                self.probe_layer
            )));
        }
        let (m, n) = self.probe_shape();
        if m * n > MAX_PROBE_SIZE {
            return Err(Error::InvalidArgument(format!(
                "probe layer {m}x{n} exceeds {MAX_PROBE_SIZE} entries"
            )));
        }
        Ok(())
    }
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone)]
struct Trace {
    pre_hidden: Vec<f64>,
    hidden: Vec<f64>,
    probs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    config: ModelConfig,
    weights: Vec<DenseMatrix>,
}

impl Model {
    /// Glorot-uniform initialization from `config.init_seed`.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let weights = config
            .layer_shapes()
            .into_iter()
            .enumerate()
            .map(|(layer, (rows, cols))| {
                let bound = (6.0 / (rows + cols) as f64).sqrt();
                let dist = Uniform::new(-bound, bound).expect("finite bounds");
                let mut rng = seed::stream(config.init_seed, "init", layer as u64);
                DenseMatrix::from_fn(rows, cols, |_, _| dist.sample(&mut rng))
            })
            .collect();
        Ok(Self { config, weights })
    }

    pub fn with_weights(config: ModelConfig, weights: Vec<DenseMatrix>) -> Result<Self> {
        config.validate()?;
        let shapes = config.layer_shapes();
        if shapes.len() != weights.len()
            || shapes.iter().zip(&weights).any(|(s, w)| *s != w.shape())
        {
            return Err(dim_mismatch(
                "Model::with_weights",
                format!("{shapes:?}"),
                format!("{:?}", weights.iter().map(DenseMatrix::shape).collect::<Vec<_>>()),
            ));
        }
        Ok(Self { config, weights })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn weights(&self) -> &[DenseMatrix] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [DenseMatrix] {
        &mut self.weights
    }

    pub fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    pub fn probe_shape(&self) -> (usize, usize) {
        self.config.probe_shape()
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.config.input_dim {
            return Err(dim_mismatch("model input", self.config.input_dim, x.len()));
        }
        Ok(())
    }

    fn trace(&self, x: &[f64]) -> Trace {
        match self.config.kind {
            ModelKind::BinaryLogistic => {
                let w = self.weights[0].as_slice();
                let z: f64 = w.iter().zip(x).map(|(a, b)| a * b).sum();
                let p1 = sigmoid(z);
                Trace {
                    pre_hidden: Vec::new(),
                    hidden: Vec::new(),
                    probs: vec![sigmoid(-z), p1],
                }
            }
            ModelKind::MultinomialLinear => {
                let logits = matvec(&self.weights[0], x);
                Trace {
                    pre_hidden: Vec::new(),
                    hidden: Vec::new(),
                    probs: softmax(&logits),
                }
            }
            ModelKind::Mlp2 => {
                let pre_hidden = matvec(&self.weights[0], x);
                let act = self.config.activation;
                let hidden: Vec<f64> = pre_hidden.iter().map(|&z| act.apply(z)).collect();
                let logits = matvec(&self.weights[1], &hidden);
                Trace {
                    pre_hidden,
                    hidden,
                    probs: softmax(&logits),
                }
            }
        }
    }

    /// Class probabilities `f(x)`.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        Ok(self.trace(x).probs)
    }

    /// Cross-entropy `−log f(x)[label]`.
    pub fn loss(&self, x: &[f64], label: usize) -> Result<f64> {
        self.check_label(label)?;
        let p = self.forward(x)?;
        Ok(-p[label].max(f64::MIN_POSITIVE).ln())
    }

    pub fn mean_loss(&self, ds: &Dataset) -> Result<f64> {
        let mut total = 0.0;
        for i in 0..ds.len() {
            total += self.loss(ds.input(i), ds.labels[i])?;
        }
        Ok(total / ds.len() as f64)
    }

    pub fn accuracy(&self, ds: &Dataset) -> Result<f64> {
        let mut hits = 0usize;
        for i in 0..ds.len() {
            let p = self.forward(ds.input(i))?;
            let pred = p
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .map(|(k, _)| k)
                .unwrap_or(0);
            if pred == ds.labels[i] {
                hits += 1;
            }
        }
        Ok(hits as f64 / ds.len() as f64)
    }

    fn check_label(&self, label: usize) -> Result<()> {
        if label >= self.config.num_classes {
            return Err(Error::InvalidArgument(format!(
                "label {label} outside [0, {})",
                self.config.num_classes
            )));
        }
        Ok(())
    }

    /// Row-side and column-side factors `(δ, a)` of every layer's gradient,
    /// `∂L/∂W_layer = δ·aᵀ`.
    fn layer_factors(&self, x: &[f64], label: usize) -> Vec<(Vec<f64>, Vec<f64>)> {
        let t = self.trace(x);
        let mut err = t.probs.clone();
        err[label] -= 1.0;
        match self.config.kind {
            // Single logit z = wᵀx with ∂L/∂z = p₁ − 1{label = 1}; in the d×1
            // orientation the whole gradient sits on the row side.
            ModelKind::BinaryLogistic => {
                let dz = t.probs[1] - if label == 1 { 1.0 } else { 0.0 };
                vec![(x.iter().map(|v| dz * v).collect(), vec![1.0])]
            }
            ModelKind::MultinomialLinear => vec![(err, x.to_vec())],
            ModelKind::Mlp2 => {
                let act = self.config.activation;
                let back = self.weights[1].matvec_t(&err).expect("shape checked");
                let delta_hidden: Vec<f64> = back
                    .iter()
                    .zip(&t.pre_hidden)
                    .map(|(b, &z)| b * act.derivative(z))
                    .collect();
                vec![(delta_hidden, x.to_vec()), (err, t.hidden)]
            }
        }
    }

    /// `(δ, a)` with `G = δ·aᵀ` for the probe layer.
    pub fn probe_factors(&self, x: &[f64], label: usize) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_input(x)?;
        self.check_label(label)?;
        Ok(self.layer_factors(x, label).swap_remove(self.config.probe_layer))
    }

    /// Cross-entropy gradient of the probe weight matrix.
    pub fn per_sample_gradient(&self, x: &[f64], label: usize) -> Result<DenseMatrix> {
        let (delta, a) = self.probe_factors(x, label)?;
        Ok(DenseMatrix::outer(&delta, &a))
    }

    /// Cross-entropy gradients of every weight matrix.
    pub fn gradients(&self, x: &[f64], label: usize) -> Result<Vec<DenseMatrix>> {
        self.check_input(x)?;
        self.check_label(label)?;
        Ok(self
            .layer_factors(x, label)
            .into_iter()
            .map(|(d, a)| DenseMatrix::outer(&d, &a))
            .collect())
    }

    /// Mean gradient of every layer over the given example indices with the
    /// given labels.
    pub fn batch_gradients(&self, ds: &Dataset, rows: &[usize], labels: &[usize]) -> Result<Vec<DenseMatrix>> {
        if rows.is_empty() || rows.len() != labels.len() {
            return Err(Error::InvalidArgument("batch must be non-empty with one label per row".into()));
        }
        let mut acc: Vec<DenseMatrix> = self
            .config
            .layer_shapes()
            .into_iter()
            .map(|(r, c)| DenseMatrix::zeros(r, c))
            .collect();
        let w = 1.0 / rows.len() as f64;
        for (&i, &y) in rows.iter().zip(labels) {
            for (a, (delta, act)) in acc.iter_mut().zip(self.layer_factors(ds.input(i), y)) {
                a.add_outer(w, &delta, &act);
            }
        }
        Ok(acc)
    }

    /// Full-batch real-label gradient of every layer.
    pub fn full_batch_gradients(&self, ds: &Dataset) -> Result<Vec<DenseMatrix>> {
        let rows: Vec<usize> = (0..ds.len()).collect();
        self.batch_gradients(ds, &rows, &ds.labels)
    }
}

fn matvec(w: &DenseMatrix, x: &[f64]) -> Vec<f64> {
    (0..w.rows())
        .map(|i| w.row(i).iter().zip(x).map(|(a, b)| a * b).sum())
        .collect()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Draws a class index from a probability vector.
pub fn sample_class<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    probs.len() - 1
}

/// One per-sample gradient and its probability weight.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedGradient {
    pub grad: DenseMatrix,
    pub weight: f64,
}

/// A discrete distribution over probe-layer gradients, defining
/// `H = E[vec(G) vec(G)ᵀ]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientEnsemble {
    m: usize,
    n: usize,
    samples: Vec<WeightedGradient>,
}

impl GradientEnsemble {
    pub fn new(m: usize, n: usize, samples: Vec<WeightedGradient>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidArgument("ensemble must be non-empty".into()));
        }
        // Neumaier summation so large uniform ensembles pass the 1e-12 check.
        let (mut total, mut comp) = (0.0_f64, 0.0_f64);
        for s in &samples {
            if s.grad.shape() != (m, n) {
                return Err(dim_mismatch(
                    "GradientEnsemble",
                    format!("({m}, {n})"),
                    format!("{:?}", s.grad.shape()),
                ));
            }
            if !s.grad.is_finite() {
                return Err(Error::NonFinite("GradientEnsemble sample"));
            }
            if !(s.weight >= 0.0) || !s.weight.is_finite() {
                return Err(Error::InvalidArgument(format!("invalid weight {}", s.weight)));
            }
            let t = total + s.weight;
            comp += if total.abs() >= s.weight.abs() {
                (total - t) + s.weight
            } else {
                (s.weight - t) + total
            };
            total = t;
        }
        let total = total + comp;
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!("weights sum to {total}, not 1")));
        }
        Ok(Self { m, n, samples })
    }

    /// Equal weights over the given gradients.
    pub fn uniform(grads: Vec<DenseMatrix>) -> Result<Self> {
        let (m, n) = grads
            .first()
            .map(DenseMatrix::shape)
            .ok_or_else(|| Error::InvalidArgument("ensemble must be non-empty".into()))?;
        let w = 1.0 / grads.len() as f64;
        let samples = grads
            .into_iter()
            .map(|grad| WeightedGradient { grad, weight: w })
            .collect();
        Self::new(m, n, samples)
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.m, self.n)
    }

    pub fn samples(&self) -> &[WeightedGradient] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Multiplies every gradient by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        Self {
            m: self.m,
            n: self.n,
            samples: self
                .samples
                .iter()
                .map(|s| WeightedGradient {
                    grad: s.grad.scale(c),
                    weight: s.weight,
                })
                .collect(),
        }
    }
}

/// How labels are attached to sampled inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelMode {
    /// Labels drawn from the model's predictive distribution.
    Sampled,
    /// Dataset labels.
    Real,
    /// Exact expectation over the predictive distribution.
    Enumerated,
}

impl LabelMode {
    pub fn label(self) -> &'static str {
        match self {
            LabelMode::Sampled => "sampled",
            LabelMode::Real => "real",
            LabelMode::Enumerated => "enumerated",
        }
    }
}

/// The exact Fisher / Gauss–Newton ensemble: `{(G_{x,c}, p_c(x)/N)}` over
/// every example `x` and class `c`.
pub fn gn_ensemble_exact(model: &Model, ds: &Dataset) -> Result<GradientEnsemble> {
    let c = model.num_classes();
    if c > MAX_ENUMERATED_CLASSES {
        return Err(Error::EnumerationLimit(format!(
            "{c} classes exceed {MAX_ENUMERATED_CLASSES}"
        )));
    }
    let (m, n) = model.probe_shape();
    let inv_n = 1.0 / ds.len() as f64;
    let mut samples = Vec::with_capacity(ds.len() * c);
    for i in 0..ds.len() {
        let x = ds.input(i);
        let probs = model.forward(x)?;
        for (class, &p) in probs.iter().enumerate() {
            samples.push(WeightedGradient {
                grad: model.per_sample_gradient(x, class)?,
                weight: p * inv_n,
            });
        }
    }
    renormalize(&mut samples);
    GradientEnsemble::new(m, n, samples)
}

/// Per-sample real-label gradients with equal weights (the empirical Fisher
/// ensemble).
pub fn empirical_fisher_ensemble(model: &Model, ds: &Dataset) -> Result<GradientEnsemble> {
    let grads = (0..ds.len())
        .map(|i| model.per_sample_gradient(ds.input(i), ds.labels[i]))
        .collect::<Result<Vec<_>>>()?;
    GradientEnsemble::uniform(grads)
}

/// Monte Carlo Fisher ensemble: `draws` pairs `(x, s)` with `x` uniform over
/// the dataset and `s ~ f(x)`.
pub fn gn_ensemble_sampled(model: &Model, ds: &Dataset, draws: usize, seed_value: u64) -> Result<GradientEnsemble> {
    if draws == 0 {
        return Err(Error::InvalidArgument("need at least one draw".into()));
    }
    let mut rng = seed::stream(seed_value, "labels", 0);
    let mut grads = Vec::with_capacity(draws);
    for _ in 0..draws {
        let i = rng.random_range(0..ds.len());
        let x = ds.input(i);
        let s = sample_class(&model.forward(x)?, &mut rng);
        grads.push(model.per_sample_gradient(x, s)?);
    }
    GradientEnsemble::uniform(grads)
}

/// `G_B = (1/|B|) Σ_{x∈B} G_{x,y}` over a batch drawn i.i.d. with
/// replacement, with real or model-sampled labels.
pub fn sample_gradient_batch<R: Rng + ?Sized>(
    model: &Model,
    ds: &Dataset,
    batch_size: usize,
    mode: LabelMode,
    rng: &mut R,
) -> Result<DenseMatrix> {
    if batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be at least 1".into()));
    }
    let (m, n) = model.probe_shape();
    let mut acc = DenseMatrix::zeros(m, n);
    let w = 1.0 / batch_size as f64;
    for _ in 0..batch_size {
        let i = rng.random_range(0..ds.len());
        let x = ds.input(i);
        let label = match mode {
            LabelMode::Real => ds.labels[i],
            LabelMode::Sampled => sample_class(&model.forward(x)?, rng),
            LabelMode::Enumerated => {
                return Err(Error::InvalidArgument(
                    "a single batch cannot enumerate labels".into(),
                ))
            }
        };
        let (delta, a) = model.probe_factors(x, label)?;
        acc.add_outer(w, &delta, &a);
    }
    Ok(acc)
}

/// Divides out the accumulated rounding in probability weights.
fn renormalize(samples: &mut [WeightedGradient]) {
    let total: f64 = samples.iter().map(|s| s.weight).sum();
    if total > 0.0 {
        samples.iter_mut().for_each(|s| s.weight /= total);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(kind: ModelKind) -> ModelConfig {
        ModelConfig {
            kind,
            input_dim: 3,
            hidden_dim: 4,
            num_classes: if kind == ModelKind::BinaryLogistic { 2 } else { 3 },
            probe_layer: 0,
            activation: Activation::Tanh,
            init_seed: 5,
        }
    }

    #[test]
    fn zero_weights_give_uniform_probabilities() {
        let c = cfg(ModelKind::BinaryLogistic);
        let model = Model::with_weights(c, vec![DenseMatrix::zeros(3, 1)]).unwrap();
        assert_eq!(model.forward(&[1.0, -2.0, 0.5]).unwrap(), vec![0.5, 0.5]);

        let c = cfg(ModelKind::MultinomialLinear);
        let model = Model::with_weights(c, vec![DenseMatrix::zeros(3, 3)]).unwrap();
        let p = model.forward(&[1.0, 2.0, 3.0]).unwrap();
        assert!(p.iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn perfect_binary_prediction_has_zero_gradient() {
        // Saturate the sigmoid so p₁ is exactly 1 in floating point.
        let c = cfg(ModelKind::BinaryLogistic);
        let model = Model::with_weights(c, vec![DenseMatrix::column(&[100.0, 0.0, 0.0])]).unwrap();
        let x = [1.0, 0.3, -0.2];
        assert_eq!(model.forward(&x).unwrap()[1], 1.0);
        let g = model.per_sample_gradient(&x, 1).unwrap();
        assert_eq!(g.max_abs(), 0.0);
    }

    #[test]
    fn config_validation() {
        let mut c = cfg(ModelKind::BinaryLogistic);
        c.num_classes = 3;
        assert!(Model::new(c).is_err());
        let mut c = cfg(ModelKind::Mlp2);
        c.probe_layer = 2;
        assert!(Model::new(c).is_err());
        let mut c = cfg(ModelKind::MultinomialLinear);
        c.input_dim = 400;
        assert!(Model::new(c).is_err());
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let a = Model::new(cfg(ModelKind::Mlp2)).unwrap();
        let b = Model::new(cfg(ModelKind::Mlp2)).unwrap();
        assert_eq!(a, b);
        let bound = (6.0_f64 / 7.0).sqrt();
        assert!(a.weights()[0].max_abs() <= bound);
    }

    #[test]
    fn ensemble_weight_validation() {
        let g = DenseMatrix::zeros(2, 2);
        let bad = vec![WeightedGradient { grad: g.clone(), weight: 0.4 }];
        assert!(GradientEnsemble::new(2, 2, bad).is_err());
        let neg = vec![
            WeightedGradient { grad: g.clone(), weight: 1.5 },
            WeightedGradient { grad: g.clone(), weight: -0.5 },
        ];
        assert!(GradientEnsemble::new(2, 2, neg).is_err());
        assert!(GradientEnsemble::uniform(vec![]).is_err());
        assert!(GradientEnsemble::new(2, 3, vec![WeightedGradient { grad: g, weight: 1.0 }]).is_err());
    }

    #[test]
    fn single_batch_rejects_enumeration() {
        let model = Model::new(cfg(ModelKind::MultinomialLinear)).unwrap();
        let ds = crate::data::synth_gaussian_classes(3, 3, 2, 1.0, 0).unwrap();
        let mut rng = seed::stream(0, "batch", 0);
        assert!(sample_gradient_batch(&model, &ds, 2, LabelMode::Enumerated, &mut rng).is_err());
        assert!(sample_gradient_batch(&model, &ds, 0, LabelMode::Real, &mut rng).is_err());
    }
}
