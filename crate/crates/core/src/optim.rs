//! Gradient descent, SGD with momentum and Shampoo.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::curvature::ShampooState;
use crate::data::Dataset;
use crate::error::{dim_mismatch, Error, Result};
use crate::kronalg::{sym_power, Damping};
use crate::linalg::DenseMatrix;
use crate::models::Model;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Gd,
    SgdMomentum,
    Shampoo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub momentum: f64,
    pub shampoo_lambda: f64,
    pub eps: Damping,
    /// Preconditioner exponent on `(L, R)`; the update is
    /// `L^{−p/2} G R^{−p/2}`, so 1/2 gives `L^{−1/4} G R^{−1/4}`.
    pub exponent: f64,
    /// 0 means full batch.
    pub batch_size: usize,
    pub steps: usize,
    pub seed: u64,
    /// Steps at which curvature is probed; empty means [`default_probe_schedule`].
    pub probe_schedule: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            optimizer: OptimizerKind::Gd,
            lr: 0.1,
            momentum: 0.0,
            shampoo_lambda: 0.99,
            eps: Damping::Auto,
            exponent: 0.5,
            batch_size: 0,
            steps: 25,
            seed: 0,
            probe_schedule: Vec::new(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidArgument(format!("lr must be positive, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.shampoo_lambda) {
            return Err(Error::InvalidArgument(format!(
                "shampoo_lambda must lie in [0, 1), got {}",
                self.shampoo_lambda
            )));
        }
        if !(self.exponent > 0.0 && self.exponent.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "exponent must be positive, got {}",
                self.exponent
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidArgument(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if let Damping::Fixed(e) = self.eps {
            if !(e >= 0.0 && e.is_finite()) {
                return Err(Error::InvalidArgument(format!("eps must be non-negative, got {e}")));
            }
        }
        if let Some(&s) = self.probe_schedule.iter().find(|&&s| s > self.steps) {
            return Err(Error::InvalidArgument(format!(
                "probe step {s} is past the last step {}",
                self.steps
            )));
        }
        Ok(())
    }

    /// Sorted, deduplicated probe steps.
    pub fn schedule(&self) -> Vec<usize> {
        if self.probe_schedule.is_empty() {
            return default_probe_schedule(self.steps);
        }
        let mut s = self.probe_schedule.clone();
        s.sort_unstable();
        s.dedup();
        s
    }
}

/// `{0, 1, 2, 4, 8, …} ∪ {steps}`
pub fn default_probe_schedule(steps: usize) -> Vec<usize> {
    let mut s = vec![0];
    let mut k = 1;
    while k < steps {
        s.push(k);
        k *= 2;
    }
    if steps > 0 {
        s.push(steps);
    }
    s
}

/// `v ← β₁v + G`, `W ← W − ηv`.
pub fn sgd_step(w: &mut DenseMatrix, velocity: &mut DenseMatrix, g: &DenseMatrix, lr: f64, momentum: f64) -> Result<()> {
    if g.shape() != w.shape() || velocity.shape() != w.shape() {
        return Err(dim_mismatch("sgd_step", format!("{:?}", w.shape()), format!("{:?}", g.shape())));
    }
    velocity.scale_in_place(momentum);
    velocity.add_scaled(1.0, g)?;
    w.add_scaled(-lr, velocity)
}

/// `L^{−q} G R^{−q}` with damped eigenvalues.
pub fn precondition(
    left: &DenseMatrix,
    right: &DenseMatrix,
    g: &DenseMatrix,
    q: f64,
    eps: Damping,
) -> Result<DenseMatrix> {
    let pl = sym_power(left, -q, eps)?;
    let pr = sym_power(right, -q, eps)?;
    pl.matmul(g)?.matmul(&pr)
}

/// Updates `state` with `G`, then `W ← W − η L^{−p/2} G R^{−p/2}`.
pub fn shampoo_step(w: &mut DenseMatrix, g: &DenseMatrix, state: &mut ShampooState, lr: f64, exponent: f64) -> Result<()> {
    if g.shape() != w.shape() {
        return Err(dim_mismatch("shampoo_step", format!("{:?}", w.shape()), format!("{:?}", g.shape())));
    }
    state.update(g)?;
    let step = precondition(&state.left, &state.right, g, exponent / 2.0, state.eps)?;
    w.add_scaled(-lr, &step)
}

/// Per-layer optimizer state for a [`Model`].
#[derive(Debug, Clone)]
pub struct Optimizer {
    cfg: TrainConfig,
    velocity: Vec<DenseMatrix>,
    shampoo: Vec<ShampooState>,
}

impl Optimizer {
    pub fn new(cfg: TrainConfig, model: &Model) -> Result<Self> {
        cfg.validate()?;
        let velocity = model
            .weights()
            .iter()
            .map(|w| DenseMatrix::zeros(w.rows(), w.cols()))
            .collect();
        let shampoo = model
            .weights()
            .iter()
            .map(|w| ShampooState::new(w.rows(), w.cols(), cfg.shampoo_lambda, cfg.eps))
            .collect::<Result<_>>()?;
        Ok(Self { cfg, velocity, shampoo })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn shampoo_states(&self) -> &[ShampooState] {
        &self.shampoo
    }

    pub fn step(&mut self, model: &mut Model, grads: &[DenseMatrix]) -> Result<()> {
        if grads.len() != self.velocity.len() {
            return Err(dim_mismatch("Optimizer::step", self.velocity.len(), grads.len()));
        }
        let cfg = &self.cfg;
        for (l, (w, g)) in model.weights_mut().iter_mut().zip(grads).enumerate() {
            match cfg.optimizer {
                OptimizerKind::Gd => sgd_step(w, &mut self.velocity[l], g, cfg.lr, 0.0)?,
                OptimizerKind::SgdMomentum => sgd_step(w, &mut self.velocity[l], g, cfg.lr, cfg.momentum)?,
                OptimizerKind::Shampoo => shampoo_step(w, g, &mut self.shampoo[l], cfg.lr, cfg.exponent)?,
            }
        }
        if model.weights().iter().any(|w| !w.is_finite()) {
            return Err(Error::NonFinite("weights after optimizer step"));
        }
        Ok(())
    }
}

/// Rows used at training step `t`: everything for full batch, otherwise
/// `batch_size` draws with replacement from stream `(seed, "train", t)`.
pub fn training_rows(ds: &Dataset, cfg: &TrainConfig, t: usize) -> Vec<usize> {
    if cfg.batch_size == 0 {
        return (0..ds.len()).collect();
    }
    let mut rng = seed::stream(cfg.seed, "train", t as u64);
    (0..cfg.batch_size).map(|_| rng.random_range(0..ds.len())).collect()
}

/// Mean real-label gradient over [`training_rows`].
pub fn training_gradient(model: &Model, ds: &Dataset, cfg: &TrainConfig, t: usize) -> Result<Vec<DenseMatrix>> {
    let rows = training_rows(ds, cfg, t);
    let labels: Vec<usize> = rows.iter().map(|&i| ds.labels[i]).collect();
    model.batch_gradients(ds, &rows, &labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_defaults() {
        assert_eq!(default_probe_schedule(10), vec![0, 1, 2, 4, 8, 10]);
        assert_eq!(default_probe_schedule(8), vec![0, 1, 2, 4, 8]);
        assert_eq!(default_probe_schedule(0), vec![0]);
    }

    #[test]
    fn plain_gd_step() {
        let mut w = DenseMatrix::from_rows(&[&[1.0, 2.0]]);
        let mut v = DenseMatrix::zeros(1, 2);
        let g = DenseMatrix::from_rows(&[&[0.5, -1.0]]);
        sgd_step(&mut w, &mut v, &g, 0.1, 0.0).unwrap();
        assert_eq!(w, DenseMatrix::from_rows(&[&[1.0 - 0.05, 2.0 + 0.1]]));
    }

    #[test]
    fn momentum_matches_recurrence() {
        let mut w = DenseMatrix::from_rows(&[&[1.0, -1.0]]);
        let mut v = DenseMatrix::zeros(1, 2);
        let gs = [[0.3, 0.1], [-0.2, 0.4]];
        let (lr, beta) = (0.05, 0.9);
        let (mut w0, mut v0) = ([1.0, -1.0], [0.0, 0.0]);
        for g in gs {
            sgd_step(&mut w, &mut v, &DenseMatrix::from_rows(&[&g]), lr, beta).unwrap();
            for k in 0..2 {
                v0[k] = beta * v0[k] + g[k];
                w0[k] -= lr * v0[k];
            }
        }
        assert_eq!(w.as_slice(), &w0);
    }

    #[test]
    fn shampoo_with_orthogonal_gradient_is_gd() {
        let g = DenseMatrix::from_rows(&[&[0.0, 1.0], &[1.0, 0.0]]);
        let mut w = DenseMatrix::zeros(2, 2);
        let mut st = ShampooState::new(2, 2, 0.0, Damping::Fixed(0.0)).unwrap();
        shampoo_step(&mut w, &g, &mut st, 0.5, 0.5).unwrap();
        let expect = g.scale(-0.5);
        for (a, b) in w.as_slice().iter().zip(expect.as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn config_validation() {
        let mut c = TrainConfig::default();
        assert!(c.validate().is_ok());
        c.lr = 0.0;
        assert!(c.validate().is_err());
        c = TrainConfig { shampoo_lambda: 1.0, ..TrainConfig::default() };
        assert!(c.validate().is_err());
        c = TrainConfig { exponent: -1.0, ..TrainConfig::default() };
        assert!(c.validate().is_err());
    }
}
