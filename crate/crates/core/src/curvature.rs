//! Curvature matrices and their Kronecker-factored estimators.

use serde::{Deserialize, Serialize};

use crate::error::{dim_mismatch, Error, Result};
use crate::kronalg::{kron, nkp_power_iteration, sym_power, vec, Damping, KronFactors, Provenance};
use crate::linalg::{svd, symmetric_eigen, DenseMatrix, SvdRank};
use crate::models::{
    empirical_fisher_ensemble, gn_ensemble_exact, sample_class, sample_gradient_batch,
    GradientEnsemble, LabelMode, Model, WeightedGradient, MAX_PROBE_SIZE,
};
use crate::data::Dataset;
use crate::seed;

pub const DEFAULT_POWER_STEPS: usize = 5;

/// Enumeration ceilings for exact batch expectations.
pub const MAX_ENUM_EXAMPLES: usize = 6;
pub const MAX_ENUM_CLASSES: usize = 3;
pub const MAX_ENUM_BATCH: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurvatureSource {
    GnExact,
    EmpiricalFisher,
    BatchCov { batch_size: usize, labels: LabelMode },
    Adagrad,
    /// Assembled from an arbitrary gradient ensemble.
    Ensemble,
}

/// A dense `mn×mn` curvature matrix over an `m×n` weight.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvatureMatrix {
    pub m: usize,
    pub n: usize,
    pub h: DenseMatrix,
    pub source: CurvatureSource,
}

impl CurvatureMatrix {
    pub fn new(m: usize, n: usize, h: DenseMatrix, source: CurvatureSource) -> Result<Self> {
        if h.shape() != (m * n, m * n) {
            return Err(dim_mismatch(
                "CurvatureMatrix",
                format!("({0}, {0})", m * n),
                format!("{:?}", h.shape()),
            ));
        }
        if !h.is_finite() {
            return Err(Error::NonFinite("CurvatureMatrix"));
        }
        let asym = h.asymmetry();
        if asym > 1e-10 {
            return Err(Error::NotSymmetric(asym));
        }
        Ok(Self { m, n, h, source })
    }

    pub fn dim(&self) -> usize {
        self.m * self.n
    }

    /// Smallest eigenvalue together with the PSD tolerance `−1e-8·trace/dim`.
    pub fn psd_margin(&self) -> Result<(f64, f64)> {
        let lmin = symmetric_eigen(&self.h)?.min_eigenvalue();
        Ok((lmin, -1e-8 * self.h.trace().abs() / self.dim() as f64))
    }

    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.h.matvec(v)
    }
}

/// `H = Σ w·vec(G) vec(G)ᵀ`
pub fn assemble(e: &GradientEnsemble) -> CurvatureMatrix {
    let (m, n) = e.shape();
    let d = m * n;
    let mut h = DenseMatrix::zeros(d, d);
    for s in e.samples() {
        h.add_sym_outer(s.weight, &vec(&s.grad));
    }
    h.mirror_upper();
    CurvatureMatrix {
        m,
        n,
        h,
        source: CurvatureSource::Ensemble,
    }
}

/// `(E[GGᵀ], E[GᵀG])`, one power-iteration round from the identity.
pub fn shampoo_sq_factors(e: &GradientEnsemble) -> KronFactors {
    let (m, n) = e.shape();
    let mut left = DenseMatrix::zeros(m, m);
    let mut right = DenseMatrix::zeros(n, n);
    for s in e.samples() {
        left.add_scaled(s.weight, &s.grad.gram_rows()).expect("shapes fixed by ensemble");
        right.add_scaled(s.weight, &s.grad.gram_cols()).expect("shapes fixed by ensemble");
    }
    KronFactors {
        left,
        right,
        provenance: Provenance::ShampooSquared,
    }
}

/// `(E[GGᵀ]^{1/2}, E[GᵀG]^{1/2})`
pub fn shampoo_factors(e: &GradientEnsemble) -> Result<KronFactors> {
    square_root_factors(&shampoo_sq_factors(e))
}

/// Element-wise PSD square roots of a factor pair, tagged as Shampoo.
pub fn square_root_factors(sq: &KronFactors) -> Result<KronFactors> {
    Ok(KronFactors {
        left: sym_power(&sq.left, 0.5, Damping::Fixed(0.0))?,
        right: sym_power(&sq.right, 0.5, Damping::Fixed(0.0))?,
        provenance: Provenance::Shampoo,
    })
}

/// Optimal Kronecker approximation after `steps` power-iteration rounds
/// from the identity.
pub fn opt_kron_factors(h: &CurvatureMatrix, steps: usize) -> Result<KronFactors> {
    let init = KronFactors::identity(h.m, h.n);
    let mut out = nkp_power_iteration(&h.h, h.m, h.n, steps, &init)?;
    out.provenance = Provenance::OptKron(steps);
    Ok(out)
}

/// Same iteration as [`opt_kron_factors`] without forming `H`: the
/// rearranged products are `Ĥ·vec(R) = vec(E[G R Gᵀ])` and
/// `Ĥᵀ·vec(L) = vec(E[Gᵀ L G])`.
pub fn opt_kron_from_ensemble(e: &GradientEnsemble, steps: usize) -> Result<KronFactors> {
    if steps == 0 {
        return Err(Error::InvalidArgument("power iteration needs at least one step".into()));
    }
    let (m, n) = e.shape();
    let left_of = |r: &DenseMatrix| -> Result<DenseMatrix> {
        let mut out = DenseMatrix::zeros(m, m);
        for s in e.samples() {
            out.add_scaled(s.weight, &s.grad.matmul(r)?.matmul(&s.grad.transpose())?)?;
        }
        Ok(out)
    };
    let right_of = |l: &DenseMatrix| -> Result<DenseMatrix> {
        let mut out = DenseMatrix::zeros(n, n);
        for s in e.samples() {
            out.add_scaled(s.weight, &s.grad.transpose().matmul(l)?.matmul(&s.grad)?)?;
        }
        Ok(out)
    };
    let unit = |a: &DenseMatrix, what: &'static str| -> Result<DenseMatrix> {
        let nv = a.frobenius_norm();
        if nv == 0.0 || !nv.is_finite() {
            return Err(Error::Degenerate(what));
        }
        Ok(a.scale(1.0 / nv))
    };
    let mut ell = left_of(&DenseMatrix::identity(n))?;
    let mut r = right_of(&DenseMatrix::identity(m))?;
    if ell.frobenius_norm() == 0.0 || r.frobenius_norm() == 0.0 {
        return Err(Error::Degenerate("curvature matrix is identically zero"));
    }
    if steps > 1 {
        for _ in 1..steps {
            ell = left_of(&unit(&r, "right iterate")?)?;
            r = right_of(&unit(&ell, "left iterate")?)?;
        }
        let ell_hat = unit(&ell, "left iterate")?;
        let r_hat = unit(&r, "right iterate")?;
        let scale = ell_hat.frobenius_dot(&left_of(&r_hat)?)?;
        ell = ell_hat.scale(scale);
        r = r_hat;
    }
    KronFactors::new(ell.symmetrized(), r.symmetrized(), Provenance::OptKron(steps))
}

/// K-FAC ("reduce" variant): `L = E[δδᵀ]`, `R = E[aaᵀ]` for per-sample
/// gradients `G = δ·aᵀ`, each expectation taken separately.
///
/// With column-stacked `vec`, `vec(δaᵀ) = a ⊗ δ`, so the dense form is
/// `E[aaᵀ] ⊗ E[δδᵀ] = kron(R, L)` like every other factor pair. The zoo has
/// no weight sharing, so the reduce and expand variants coincide. For
/// `binary_logistic` the column side is the constant `[1]` (n = 1) and the
/// result is Shampoo² up to the scalar `tr(E[GGᵀ])`.
///
/// `seed_value` is only used for [`LabelMode::Sampled`].
pub fn kfac_factors(model: &Model, ds: &Dataset, labels: LabelMode, seed_value: u64) -> Result<KronFactors> {
    let (m, n) = model.probe_shape();
    let mut left = DenseMatrix::zeros(m, m);
    let mut right = DenseMatrix::zeros(n, n);
    let inv_n = 1.0 / ds.len() as f64;
    let mut rng = seed::stream(seed_value, "labels", 1);
    for i in 0..ds.len() {
        let x = ds.input(i);
        match labels {
            LabelMode::Enumerated => {
                let probs = model.forward(x)?;
                let mut a_side = None;
                for (c, &p) in probs.iter().enumerate() {
                    let (delta, a) = model.probe_factors(x, c)?;
                    left.add_outer(p * inv_n, &delta, &delta);
                    a_side.get_or_insert(a);
                }
                let a = a_side.expect("at least two classes");
                right.add_outer(inv_n, &a, &a);
            }
            LabelMode::Real | LabelMode::Sampled => {
                let y = if labels == LabelMode::Real {
                    ds.labels[i]
                } else {
                    sample_class(&model.forward(x)?, &mut rng)
                };
                let (delta, a) = model.probe_factors(x, y)?;
                if delta.len() != m || a.len() != n {
                    return Err(Error::KfacUnavailable(format!(
                        "factor lengths ({}, {}) do not match probe {m}x{n}",
                        delta.len(),
                        a.len()
                    )));
                }
                left.add_outer(inv_n, &delta, &delta);
                right.add_outer(inv_n, &a, &a);
            }
        }
    }
    Ok(KronFactors {
        left: left.symmetrized(),
        right: right.symmetrized(),
        provenance: Provenance::Kfac,
    })
}

/// Exact Fisher `E_{x, s~f(x)}[g gᵀ]`.
pub fn gn_curvature(model: &Model, ds: &Dataset) -> Result<CurvatureMatrix> {
    let mut c = assemble(&gn_ensemble_exact(model, ds)?);
    c.source = CurvatureSource::GnExact;
    Ok(c)
}

/// Empirical Fisher `E_{x,y}[g gᵀ]`.
pub fn empirical_fisher(model: &Model, ds: &Dataset) -> Result<CurvatureMatrix> {
    let mut c = assemble(&empirical_fisher_ensemble(model, ds)?);
    c.source = CurvatureSource::EmpiricalFisher;
    Ok(c)
}

/// Largest numerical rank among the samples (singular values above
/// `1e-10·σ₁`).
pub fn max_sample_rank(grads: impl IntoIterator<Item = impl AsRef<DenseMatrix>>) -> Result<usize> {
    let mut r = 0;
    for g in grads {
        let s = svd(g.as_ref(), SvdRank::Full)?.singular_values;
        let top = s.first().copied().unwrap_or(0.0);
        if top > 0.0 {
            r = r.max(s.iter().filter(|&&v| v > 1e-10 * top).count());
        }
    }
    Ok(r)
}

impl AsRef<DenseMatrix> for DenseMatrix {
    fn as_ref(&self) -> &DenseMatrix {
        self
    }
}

impl AsRef<DenseMatrix> for WeightedGradient {
    fn as_ref(&self) -> &DenseMatrix {
        &self.grad
    }
}

/// Result of a PSD-dominance check `bound ⪰ target`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DominanceCheck {
    pub rank_bound: usize,
    pub min_eigenvalue: f64,
    pub trace: f64,
}

impl DominanceCheck {
    /// `λ_min(bound − target) ≥ −1e-8·trace(target)`
    pub fn holds(&self) -> bool {
        self.min_eigenvalue >= -1e-8 * self.trace
    }
}

/// `λ_min(r·E[GGᵀ]^{1/2} ⊗ E[GᵀG]^{1/2} − E[ggᵀ])` for the ensemble.
pub fn shampoo_dominance(e: &GradientEnsemble) -> Result<DominanceCheck> {
    let r = max_sample_rank(e.samples())?;
    let h = assemble(e);
    let bound = shampoo_factors(e)?.to_dense().scale(r as f64);
    let diff = bound.sub(&h.h)?;
    Ok(DominanceCheck {
        rank_bound: r,
        min_eigenvalue: symmetric_eigen(&diff)?.min_eigenvalue(),
        trace: h.h.trace(),
    })
}

/// Batch-gradient second moments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Expectation {
    /// Average over `trials` batches, trial `t` seeded from `(seed, "batch", t)`.
    MonteCarlo { trials: usize, seed: u64 },
    /// Exact expectation over every ordered batch tuple and label assignment.
    Enumerated,
}

#[derive(Debug, Clone)]
pub struct BatchCovariance {
    pub curvature: CurvatureMatrix,
    /// Ensemble of (scaled) batch gradients whose assembly is `curvature`.
    pub ensemble: GradientEnsemble,
    /// Standard error of the estimate in Frobenius norm (Monte Carlo only):
    /// `sqrt(Σᵢⱼ Var̂(Xᵢⱼ)/T)`.
    pub frobenius_stderr: Option<f64>,
}

/// `|B|·E[vec(G_{B,s}) vec(G_{B,s})ᵀ]` for sampled labels or
/// `E[vec(G_B) vec(G_B)ᵀ]` for real labels.
pub fn batch_covariance(
    model: &Model,
    ds: &Dataset,
    batch_size: usize,
    labels: LabelMode,
    expectation: Expectation,
) -> Result<BatchCovariance> {
    if batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be at least 1".into()));
    }
    let scale = match labels {
        LabelMode::Sampled => (batch_size as f64).sqrt(),
        LabelMode::Real => 1.0,
        LabelMode::Enumerated => {
            return Err(Error::InvalidArgument(
                "batch covariance takes sampled or real labels; choose Expectation::Enumerated for exact sums".into(),
            ))
        }
    };
    let (m, n) = model.probe_shape();
    let source = CurvatureSource::BatchCov { batch_size, labels };
    match expectation {
        Expectation::MonteCarlo { trials, seed: seed_value } => {
            if trials == 0 {
                return Err(Error::InvalidArgument("need at least one trial".into()));
            }
            let d = m * n;
            let mut sum = DenseMatrix::zeros(d, d);
            let mut sum_sq = DenseMatrix::zeros(d, d);
            let mut grads = Vec::with_capacity(trials);
            for t in 0..trials {
                let mut rng = seed::stream(seed_value, "batch", t as u64);
                let g = sample_gradient_batch(model, ds, batch_size, labels, &mut rng)?.scale(scale);
                let gv = vec(&g);
                for i in 0..d {
                    for j in i..d {
                        let x = gv[i] * gv[j];
                        sum[(i, j)] += x;
                        sum_sq[(i, j)] += x * x;
                    }
                }
                grads.push(g);
            }
            let tf = trials as f64;
            let mut var_total = 0.0;
            for i in 0..d {
                for j in i..d {
                    let mean = sum[(i, j)] / tf;
                    let var = if trials > 1 {
                        ((sum_sq[(i, j)] / tf - mean * mean) * tf / (tf - 1.0)).max(0.0)
                    } else {
                        0.0
                    };
                    var_total += if i == j { var } else { 2.0 * var };
                }
            }
            let ensemble = GradientEnsemble::uniform(grads)?;
            let mut curvature = assemble(&ensemble);
            curvature.source = source;
            Ok(BatchCovariance {
                curvature,
                ensemble,
                frobenius_stderr: Some((var_total / tf).sqrt()),
            })
        }
        Expectation::Enumerated => {
            let nx = ds.len();
            let c = model.num_classes();
            if nx > MAX_ENUM_EXAMPLES || c > MAX_ENUM_CLASSES || batch_size > MAX_ENUM_BATCH {
                return Err(Error::EnumerationLimit(format!(
                    "dataset {nx} (max {MAX_ENUM_EXAMPLES}), classes {c} (max {MAX_ENUM_CLASSES}), batch {batch_size} (max {MAX_ENUM_BATCH})"
                )));
            }
            let probs = (0..nx)
                .map(|i| model.forward(ds.input(i)))
                .collect::<Result<Vec<_>>>()?;
            let per_example: Vec<Vec<DenseMatrix>> = (0..nx)
                .map(|i| {
                    (0..c)
                        .map(|k| model.per_sample_gradient(ds.input(i), k))
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<_>>()?;
            let mut samples = Vec::new();
            let mut rows = vec![0usize; batch_size];
            let tuple_weight = (nx as f64).powi(batch_size as i32).recip();
            loop {
                match labels {
                    LabelMode::Real => {
                        let mut g = DenseMatrix::zeros(m, n);
                        for &i in &rows {
                            g.add_scaled(1.0 / batch_size as f64, &per_example[i][ds.labels[i]])?;
                        }
                        samples.push(WeightedGradient {
                            grad: g.scale(scale),
                            weight: tuple_weight,
                        });
                    }
                    _ => {
                        let mut classes = vec![0usize; batch_size];
                        loop {
                            let mut g = DenseMatrix::zeros(m, n);
                            let mut w = tuple_weight;
                            for (&i, &k) in rows.iter().zip(&classes) {
                                g.add_scaled(1.0 / batch_size as f64, &per_example[i][k])?;
                                w *= probs[i][k];
                            }
                            samples.push(WeightedGradient {
                                grad: g.scale(scale),
                                weight: w,
                            });
                            if !odometer(&mut classes, c) {
                                break;
                            }
                        }
                    }
                }
                if !odometer(&mut rows, nx) {
                    break;
                }
            }
            let total: f64 = samples.iter().map(|s| s.weight).sum();
            samples.iter_mut().for_each(|s| s.weight /= total);
            let ensemble = GradientEnsemble::new(m, n, samples)?;
            let mut curvature = assemble(&ensemble);
            curvature.source = source;
            Ok(BatchCovariance {
                curvature,
                ensemble,
                frobenius_stderr: None,
            })
        }
    }
}

/// Advances a base-`radix` counter; returns false after wrapping to zero.
fn odometer(digits: &mut [usize], radix: usize) -> bool {
    for d in digits.iter_mut() {
        *d += 1;
        if *d < radix {
            return true;
        }
        *d = 0;
    }
    false
}

/// Closed-form real-label batch ensemble:
/// `{(G_{x,y}, 1/(|B|·N))}` plus `(Ḡ, 1 − 1/|B|)` with `Ḡ = E[G_{x,y}]`.
/// Its assembly is `E[g_B g_Bᵀ]` and its Shampoo² factors are
/// `E[G_B G_Bᵀ]`, `E[G_Bᵀ G_B]` for batches drawn with replacement.
pub fn real_label_batch_ensemble(model: &Model, ds: &Dataset, batch_size: usize) -> Result<GradientEnsemble> {
    if batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be at least 1".into()));
    }
    let ef = empirical_fisher_ensemble(model, ds)?;
    let (m, n) = ef.shape();
    let mut mean = DenseMatrix::zeros(m, n);
    for s in ef.samples() {
        mean.add_scaled(s.weight, &s.grad)?;
    }
    let inv_b = 1.0 / batch_size as f64;
    let mut samples: Vec<WeightedGradient> = ef
        .samples()
        .iter()
        .map(|s| WeightedGradient {
            grad: s.grad.clone(),
            weight: s.weight * inv_b,
        })
        .collect();
    if batch_size > 1 {
        samples.push(WeightedGradient {
            grad: mean,
            weight: 1.0 - inv_b,
        });
    }
    let total: f64 = samples.iter().map(|s| s.weight).sum();
    samples.iter_mut().for_each(|s| s.weight /= total);
    GradientEnsemble::new(m, n, samples)
}

/// Running full-matrix Adagrad statistics for one weight matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct AdagradAccumulator {
    m: usize,
    n: usize,
    h_exact: Option<DenseMatrix>,
    left: DenseMatrix,
    right: DenseMatrix,
    max_rank: usize,
    steps: usize,
}

impl AdagradAccumulator {
    /// `track_exact` keeps the dense `Σ g gᵀ`, allowed up to `mn ≤ 1024`.
    pub fn new(m: usize, n: usize, track_exact: bool) -> Result<Self> {
        if track_exact && m * n > MAX_PROBE_SIZE {
            return Err(Error::InvalidArgument(format!(
                "dense Adagrad matrix of side {} exceeds {MAX_PROBE_SIZE}",
                m * n
            )));
        }
        Ok(Self {
            m,
            n,
            h_exact: track_exact.then(|| DenseMatrix::zeros(m * n, m * n)),
            left: DenseMatrix::zeros(m, m),
            right: DenseMatrix::zeros(n, n),
            max_rank: 0,
            steps: 0,
        })
    }

    pub fn update(&mut self, g: &DenseMatrix) -> Result<()> {
        if g.shape() != (self.m, self.n) {
            return Err(dim_mismatch(
                "AdagradAccumulator::update",
                format!("({}, {})", self.m, self.n),
                format!("{:?}", g.shape()),
            ));
        }
        if let Some(h) = self.h_exact.as_mut() {
            let gv = vec(g);
            h.add_sym_outer(1.0, &gv);
        }
        self.left.add_scaled(1.0, &g.gram_rows())?;
        self.right.add_scaled(1.0, &g.gram_cols())?;
        self.max_rank = self.max_rank.max(max_sample_rank([g])?);
        self.steps += 1;
        Ok(())
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn max_rank(&self) -> usize {
        self.max_rank
    }

    /// `Σ G Gᵀ`
    pub fn left(&self) -> &DenseMatrix {
        &self.left
    }

    /// `Σ Gᵀ G`
    pub fn right(&self) -> &DenseMatrix {
        &self.right
    }

    /// Dense `Σ g gᵀ`, when tracked.
    pub fn exact(&self) -> Option<CurvatureMatrix> {
        self.h_exact.as_ref().map(|h| {
            let mut h = h.clone();
            h.mirror_upper();
            CurvatureMatrix {
                m: self.m,
                n: self.n,
                h,
                source: CurvatureSource::Adagrad,
            }
        })
    }

    pub fn shampoo_sq(&self) -> KronFactors {
        KronFactors {
            left: self.left.clone(),
            right: self.right.clone(),
            provenance: Provenance::ShampooSquared,
        }
    }

    pub fn shampoo(&self) -> Result<KronFactors> {
        square_root_factors(&self.shampoo_sq())
    }

    /// `λ_min((εI + L)^{1/2} ⊗ (εI + R)^{1/2} − εI − H/r)` with `r` the
    /// largest rank seen so far.
    pub fn dominance(&self, eps: f64) -> Result<DominanceCheck> {
        let h = self
            .exact()
            .ok_or_else(|| Error::InvalidArgument("dense Adagrad matrix not tracked".into()))?;
        let r = self.max_rank.max(1);
        let l = sym_power(&self.left.add(&DenseMatrix::identity(self.m).scale(eps))?, 0.5, Damping::Fixed(0.0))?;
        let rr = sym_power(&self.right.add(&DenseMatrix::identity(self.n).scale(eps))?, 0.5, Damping::Fixed(0.0))?;
        let d = self.m * self.n;
        let lower = h.h.scale(1.0 / r as f64).add(&DenseMatrix::identity(d).scale(eps))?;
        let diff = kron(&rr, &l).sub(&lower)?;
        Ok(DominanceCheck {
            rank_bound: r,
            min_eigenvalue: symmetric_eigen(&diff)?.min_eigenvalue(),
            trace: h.h.trace(),
        })
    }
}

/// Exponential moving averages `L ← λL + (1−λ)GGᵀ`, `R ← λR + (1−λ)GᵀG`.
#[derive(Debug, Clone, PartialEq)]
pub struct ShampooState {
    pub left: DenseMatrix,
    pub right: DenseMatrix,
    pub lambda: f64,
    pub eps: Damping,
    pub steps: usize,
}

impl ShampooState {
    pub fn new(m: usize, n: usize, lambda: f64, eps: Damping) -> Result<Self> {
        if !(0.0..1.0).contains(&lambda) {
            return Err(Error::InvalidArgument(format!("EMA coefficient {lambda} outside [0, 1)")));
        }
        Ok(Self {
            left: DenseMatrix::zeros(m, m),
            right: DenseMatrix::zeros(n, n),
            lambda,
            eps,
            steps: 0,
        })
    }

    pub fn update(&mut self, g: &DenseMatrix) -> Result<()> {
        if g.shape() != (self.left.rows(), self.right.rows()) {
            return Err(dim_mismatch(
                "ShampooState::update",
                format!("({}, {})", self.left.rows(), self.right.rows()),
                format!("{:?}", g.shape()),
            ));
        }
        let lam = self.lambda;
        self.left.scale_in_place(lam);
        self.left.add_scaled(1.0 - lam, &g.gram_rows())?;
        self.right.scale_in_place(lam);
        self.right.add_scaled(1.0 - lam, &g.gram_cols())?;
        self.steps += 1;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(g: DenseMatrix) -> GradientEnsemble {
        GradientEnsemble::uniform(vec![g]).unwrap()
    }

    #[test]
    fn assemble_rank_one() {
        let e = single(DenseMatrix::from_rows(&[&[1.0, 0.0], &[0.0, 0.0]]));
        assert_eq!(assemble(&e).h, DenseMatrix::from_diag(&[1.0, 0.0, 0.0, 0.0]));
    }

    #[test]
    fn assemble_two_orthogonal() {
        let a = DenseMatrix::from_rows(&[&[1.0, 0.0], &[0.0, 0.0]]);
        let b = DenseMatrix::from_rows(&[&[0.0, 0.0], &[0.0, 2.0]]);
        let h = assemble(&GradientEnsemble::uniform(vec![a, b]).unwrap()).h;
        assert_eq!(h, DenseMatrix::from_diag(&[0.5, 0.0, 0.0, 2.0]));
    }

    #[test]
    fn single_sample_factors() {
        let e = single(DenseMatrix::from_rows(&[&[1.0, 0.0], &[0.0, 0.0]]));
        let sq = shampoo_sq_factors(&e);
        assert_eq!(sq.left, DenseMatrix::from_diag(&[1.0, 0.0]));
        assert_eq!(sq.right, DenseMatrix::from_diag(&[1.0, 0.0]));
        assert_eq!(sq.to_dense(), assemble(&e).h);
        let sh = shampoo_factors(&e).unwrap();
        assert_eq!(sh.left, DenseMatrix::from_diag(&[1.0, 0.0]));
        assert_eq!(sh.right, DenseMatrix::from_diag(&[1.0, 0.0]));
    }

    #[test]
    fn adagrad_first_update() {
        let mut acc = AdagradAccumulator::new(2, 2, true).unwrap();
        acc.update(&DenseMatrix::from_rows(&[&[1.0, 0.0], &[0.0, 0.0]])).unwrap();
        assert_eq!(acc.exact().unwrap().h, DenseMatrix::from_diag(&[1.0, 0.0, 0.0, 0.0]));
        assert_eq!(acc.left(), &DenseMatrix::from_diag(&[1.0, 0.0]));
        assert_eq!(acc.steps(), 1);
        assert!(acc.update(&DenseMatrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn adagrad_rejects_large_dense_tracking() {
        assert!(AdagradAccumulator::new(40, 40, true).is_err());
        assert!(AdagradAccumulator::new(40, 40, false).is_ok());
    }

    #[test]
    fn shampoo_state_lambda_zero_keeps_last() {
        let mut s = ShampooState::new(2, 3, 0.0, Damping::Auto).unwrap();
        let g1 = DenseMatrix::from_rows(&[&[1.0, 2.0, 0.0], &[0.0, 1.0, 1.0]]);
        let g2 = DenseMatrix::from_rows(&[&[0.0, 1.0, 3.0], &[2.0, 0.0, 1.0]]);
        s.update(&g1).unwrap();
        s.update(&g2).unwrap();
        assert_eq!(s.left, g2.gram_rows());
        assert_eq!(s.right, g2.gram_cols());
        assert!(ShampooState::new(2, 2, 1.0, Damping::Auto).is_err());
    }

    #[test]
    fn shampoo_state_zero_stream_decays() {
        let mut s = ShampooState::new(2, 2, 0.5, Damping::Auto).unwrap();
        s.update(&DenseMatrix::identity(2)).unwrap();
        let start = s.left.clone();
        for k in 1..=4 {
            s.update(&DenseMatrix::zeros(2, 2)).unwrap();
            let expect = start.scale(0.5_f64.powi(k));
            assert_eq!(s.left, expect);
        }
    }

    #[test]
    fn odometer_counts_all_tuples() {
        let mut d = vec![0usize; 3];
        let mut count = 1;
        while odometer(&mut d, 4) {
            count += 1;
        }
        assert_eq!(count, 64);
    }
}
