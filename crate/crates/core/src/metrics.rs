//! Cosine similarities, Hutchinson probing and rearrangement spectra.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::curvature::CurvatureMatrix;
use crate::error::{dim_mismatch, Error, Result};
use crate::kronalg::{rearrange, unvec, vec, KronFactors, RearrangedMatrix};
use crate::linalg::{dot, norm, svd, symmetric_eigen, DenseMatrix, SvdRank};
use crate::models::MAX_PROBE_SIZE;
use crate::seed;

pub const DEFAULT_NUM_PROBES: usize = 100;

/// `Tr(M₁M₂ᵀ) / (‖M₁‖_F ‖M₂‖_F)`
pub fn cosine_similarity(a: &DenseMatrix, b: &DenseMatrix) -> Result<f64> {
    let d = a.frobenius_dot(b)?;
    let (na, nb) = (a.frobenius_norm(), b.frobenius_norm());
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Degenerate("cosine similarity of a zero matrix"));
    }
    Ok((d / (na * nb)).clamp(-1.0, 1.0))
}

/// Cosine between `H` and the dense form of `k` without materializing it:
/// `⟨H, kron(R, L)⟩ = vec(L)ᵀ Ĥ vec(R)` and `‖L⊗R‖ = ‖L‖‖R‖`.
pub fn cosine_similarity_kron(k: &KronFactors, h: &CurvatureMatrix) -> Result<f64> {
    let hat = rearrange(&h.h, h.m, h.n)?;
    cosine_similarity_rearranged(k, &hat)
}

/// As [`cosine_similarity_kron`] on an already rearranged `Ĥ` (‖Ĥ‖ = ‖H‖).
pub fn cosine_similarity_rearranged(k: &KronFactors, hat: &RearrangedMatrix) -> Result<f64> {
    let num = hat.bilinear(&k.left, &k.right)?;
    let (nk, nh) = (k.frobenius_norm(), hat.matrix().frobenius_norm());
    if nk == 0.0 || nh == 0.0 {
        return Err(Error::Degenerate("cosine similarity of a zero matrix"));
    }
    Ok((num / (nk * nh)).clamp(-1.0, 1.0))
}

/// `K` standard-normal probes of length `dim`, probe `k` drawn from stream
/// `(seed, "probe", k)`.
pub fn gaussian_probes(dim: usize, count: usize, seed_value: u64) -> Vec<Vec<f64>> {
    (0..count)
        .map(|k| {
            let mut rng = seed::stream(seed_value, "probe", k as u64);
            (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect()
        })
        .collect()
}

/// Mean of `‖Hv‖²` over the probes and its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SquaredNormEstimate {
    pub mean: f64,
    pub stderr: f64,
}

impl SquaredNormEstimate {
    fn from_samples(xs: &[f64]) -> Self {
        let k = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / k;
        let stderr = if xs.len() > 1 {
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (k - 1.0);
            (var / k).sqrt()
        } else {
            f64::INFINITY
        };
        Self { mean, stderr }
    }

    pub fn norm(&self) -> f64 {
        self.mean.sqrt()
    }
}

/// Matrix-free operator `v ↦ H·v`.
pub trait HvOperator {
    fn dim(&self) -> usize;
    fn apply(&mut self, v: &[f64]) -> Result<Vec<f64>>;
}

impl HvOperator for DenseMatrix {
    fn dim(&self) -> usize {
        self.cols()
    }

    fn apply(&mut self, v: &[f64]) -> Result<Vec<f64>> {
        self.matvec(v)
    }
}

impl HvOperator for CurvatureMatrix {
    fn dim(&self) -> usize {
        CurvatureMatrix::dim(self)
    }

    fn apply(&mut self, v: &[f64]) -> Result<Vec<f64>> {
        self.matvec(v)
    }
}

/// Wraps a closure as an [`HvOperator`].
pub struct FnOperator<F> {
    pub dim: usize,
    pub f: F,
}

impl<F: FnMut(&[f64]) -> Result<Vec<f64>>> HvOperator for FnOperator<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn apply(&mut self, v: &[f64]) -> Result<Vec<f64>> {
        (self.f)(v)
    }
}

fn products(hv: &mut dyn HvOperator, probes: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    probes
        .iter()
        .map(|v| {
            let out = hv.apply(v)?;
            if out.len() != v.len() {
                return Err(dim_mismatch("H·v", v.len(), out.len()));
            }
            Ok(out)
        })
        .collect()
}

/// `E‖Hv‖²` over `count` seeded Gaussian probes.
pub fn hutchinson_squared(hv: &mut dyn HvOperator, count: usize, seed_value: u64) -> Result<SquaredNormEstimate> {
    if count == 0 {
        return Err(Error::InvalidArgument("need at least one probe".into()));
    }
    let probes = gaussian_probes(hv.dim(), count, seed_value);
    let sq: Vec<f64> = products(hv, &probes)?.iter().map(|p| dot(p, p)).collect();
    Ok(SquaredNormEstimate::from_samples(&sq))
}

/// `sqrt(mean ‖Hv‖²)`, an estimate of `‖H‖_F`.
pub fn hutchinson_frobenius(hv: &mut dyn HvOperator, count: usize, seed_value: u64) -> Result<f64> {
    Ok(hutchinson_squared(hv, count, seed_value)?.norm())
}

/// Probe estimate of `cos(H, L⊗R)`:
///
/// 1. `h = sqrt(mean ‖Hv‖²)` (or `h_norm` if given),
/// 2. `S = (h / ‖L‖‖R‖)·(L⊗R)`,
/// 3. `cos = 1 − mean ‖(H − S)v‖² / (2h²)`, on the same probes.
pub fn probe_cosine(
    hv: &mut dyn HvOperator,
    estimator: &KronFactors,
    count: usize,
    seed_value: u64,
    h_norm: Option<f64>,
) -> Result<f64> {
    if count == 0 {
        return Err(Error::InvalidArgument("need at least one probe".into()));
    }
    let (m, n) = estimator.dims();
    if hv.dim() != m * n {
        return Err(dim_mismatch("probe_cosine", m * n, hv.dim()));
    }
    let probes = gaussian_probes(hv.dim(), count, seed_value);
    let hvs = products(hv, &probes)?;
    cosine_from_products(&probes, &hvs, estimator, h_norm)
}

fn cosine_from_products(
    probes: &[Vec<f64>],
    hvs: &[Vec<f64>],
    estimator: &KronFactors,
    h_norm: Option<f64>,
) -> Result<f64> {
    let kn = estimator.frobenius_norm();
    if kn == 0.0 {
        return Err(Error::Degenerate("zero estimator"));
    }
    let count = probes.len() as f64;
    let h = match h_norm {
        Some(h) => h,
        None => (hvs.iter().map(|p| dot(p, p)).sum::<f64>() / count).sqrt(),
    };
    if h == 0.0 {
        return Err(Error::Degenerate("zero curvature"));
    }
    let scale = h / kn;
    let mut resid = 0.0;
    for (v, hvk) in probes.iter().zip(hvs) {
        let sv = estimator.apply(v)?;
        resid += hvk
            .iter()
            .zip(&sv)
            .map(|(a, b)| (a - scale * b).powi(2))
            .sum::<f64>();
    }
    resid /= count;
    Ok((1.0 - resid / (2.0 * h * h)).clamp(-1.0, 1.0))
}

/// Fixed Gaussian probes with running `Σ_t (g_tᵀv) g_t` accumulators, i.e.
/// `H_Ada·v` for every probe without storing `H_Ada`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeBank {
    dim: usize,
    probes: Vec<Vec<f64>>,
    hv: Vec<Vec<f64>>,
    steps: usize,
}

impl ProbeBank {
    pub fn new(dim: usize, count: usize, seed_value: u64) -> Result<Self> {
        if count == 0 {
            return Err(Error::InvalidArgument("need at least one probe".into()));
        }
        Ok(Self::with_probes(dim, gaussian_probes(dim, count, seed_value)))
    }

    /// Bank over caller-supplied probes (all of length `dim`).
    pub fn with_probes(dim: usize, probes: Vec<Vec<f64>>) -> Self {
        assert!(probes.iter().all(|p| p.len() == dim), "probe length must equal dim");
        let hv = vec![vec![0.0; dim]; probes.len()];
        Self { dim, probes, hv, steps: 0 }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_probes(&self) -> usize {
        self.probes.len()
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn probes(&self) -> &[Vec<f64>] {
        &self.probes
    }

    /// Current `H_Ada·v_k` for every probe.
    pub fn products(&self) -> &[Vec<f64>] {
        &self.hv
    }

    /// Advances every accumulator by `(gᵀv)·g`.
    pub fn adagrad_hv(&mut self, g: &[f64]) -> Result<()> {
        if g.len() != self.dim {
            return Err(dim_mismatch("ProbeBank::adagrad_hv", self.dim, g.len()));
        }
        for (v, acc) in self.probes.iter().zip(self.hv.iter_mut()) {
            let c = dot(g, v);
            if c != 0.0 {
                for (a, gi) in acc.iter_mut().zip(g) {
                    *a += c * gi;
                }
            }
        }
        self.steps += 1;
        Ok(())
    }

    pub fn frobenius(&self) -> SquaredNormEstimate {
        let sq: Vec<f64> = self.hv.iter().map(|p| dot(p, p)).collect();
        SquaredNormEstimate::from_samples(&sq)
    }

    pub fn probe_cosine(&self, estimator: &KronFactors) -> Result<f64> {
        let (m, n) = estimator.dims();
        if m * n != self.dim {
            return Err(dim_mismatch("ProbeBank::probe_cosine", self.dim, m * n));
        }
        cosine_from_products(&self.probes, &self.hv, estimator, None)
    }
}

/// Eigenvalue sign check on a reshaped singular vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsdCheck {
    pub min_eigenvalue: f64,
    pub max_eigenvalue: f64,
    pub frobenius: f64,
}

impl PsdCheck {
    fn of(m: &DenseMatrix) -> Result<Self> {
        let e = symmetric_eigen(m)?;
        Ok(Self {
            min_eigenvalue: e.min_eigenvalue(),
            max_eigenvalue: e.max_eigenvalue(),
            frobenius: m.frobenius_norm(),
        })
    }

    /// PSD, or negative semidefinite (a sign-flipped PSD vector), to `tol·‖·‖_F`.
    pub fn is_semidefinite(&self, tol: f64) -> bool {
        let t = tol * self.frobenius;
        self.min_eigenvalue >= -t || self.max_eigenvalue <= t
    }

    /// Has eigenvalues of both signs beyond `1e-6·‖·‖_F`.
    pub fn is_indefinite(&self) -> bool {
        let t = 1e-6 * self.frobenius;
        self.min_eigenvalue < -t && self.max_eigenvalue > t
    }

    /// Definite with margin `tol·‖·‖_F`.
    pub fn is_definite(&self, tol: f64) -> bool {
        let t = tol * self.frobenius;
        self.min_eigenvalue > t || self.max_eigenvalue < -t
    }
}

/// Singular spectrum of `Ĥ` with the trace overlaps that govern one-step
/// power iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    pub m: usize,
    pub n: usize,
    pub sigmas: Vec<f64>,
    /// `Tr(Uᵢ) = ⟨vec(I_m), uᵢ⟩`
    pub alphas_left: Vec<f64>,
    /// `Tr(Vᵢ) = ⟨vec(I_n), vᵢ⟩`
    pub alphas_right: Vec<f64>,
    /// `σ₁ / sqrt(Σσᵢ²)`
    pub ratio_opt: f64,
    /// Cosine between `Ĥ·vec(I_n)` and `u₁`: `β₁σ₁ / sqrt(Σβᵢ²σᵢ²)` with `β = alphas_right`.
    pub ratio_l: f64,
    /// Cosine between `Ĥᵀ·vec(I_m)` and `v₁`, using `alphas_left`.
    pub ratio_r: f64,
    pub u1: PsdCheck,
    pub v1: PsdCheck,
    /// Checks on the symmetric part of `Vᵢ` for `i ≥ 2` with `σᵢ > 1e-12·σ₁`.
    /// Antisymmetric `Vᵢ` (symmetric part below `1e-8`) are counted in
    /// `v_rest_antisymmetric` instead, since definiteness says nothing about them.
    pub v_rest: Vec<PsdCheck>,
    pub v_rest_antisymmetric: usize,
}

impl SpectrumReport {
    /// Whether every later `Vᵢ` is indefinite, which is only guaranteed
    /// when `V₁` is definite.
    pub fn rest_indefinite(&self) -> bool {
        self.v_rest.iter().all(PsdCheck::is_indefinite)
    }
}

fn overlap_ratio(alphas: &[f64], sigmas: &[f64]) -> f64 {
    let den = alphas
        .iter()
        .zip(sigmas)
        .map(|(a, s)| (a * s).powi(2))
        .sum::<f64>()
        .sqrt();
    if den == 0.0 {
        0.0
    } else {
        (alphas[0] * sigmas[0] / den).clamp(-1.0, 1.0)
    }
}

pub fn spectrum_report(h: &CurvatureMatrix) -> Result<SpectrumReport> {
    let (m, n) = (h.m, h.n);
    if m * n > MAX_PROBE_SIZE {
        return Err(Error::InvalidArgument(format!(
            "spectrum needs mn ≤ {MAX_PROBE_SIZE}, got {}",
            m * n
        )));
    }
    let hat = rearrange(&h.h, m, n)?;
    let s = svd(hat.matrix(), SvdRank::Full)?;
    let sigmas = s.singular_values.clone();
    if sigmas.first().copied().unwrap_or(0.0) == 0.0 {
        return Err(Error::Degenerate("zero curvature has no spectrum"));
    }
    let eye_m = vec(&DenseMatrix::identity(m));
    let eye_n = vec(&DenseMatrix::identity(n));
    let alphas_left: Vec<f64> = (0..s.rank()).map(|i| dot(&eye_m, &s.left_vector(i))).collect();
    let alphas_right: Vec<f64> = (0..s.rank()).map(|i| dot(&eye_n, &s.right_vector(i))).collect();
    let ratio_opt = sigmas[0] / norm(&sigmas);
    let ratio_l = overlap_ratio(&alphas_right, &sigmas);
    let ratio_r = overlap_ratio(&alphas_left, &sigmas);
    let u1 = PsdCheck::of(&unvec(&s.left_vector(0), m, m)?.symmetrized())?;
    let v1 = PsdCheck::of(&unvec(&s.right_vector(0), n, n)?.symmetrized())?;
    let cutoff = 1e-12 * sigmas[0];
    let mut v_rest = Vec::new();
    let mut v_rest_antisymmetric = 0;
    for i in (1..s.rank()).filter(|&i| sigmas[i] > cutoff) {
        let sym = unvec(&s.right_vector(i), n, n)?.symmetrized();
        if sym.frobenius_norm() < 1e-8 {
            v_rest_antisymmetric += 1;
        } else {
            v_rest.push(PsdCheck::of(&sym)?);
        }
    }
    Ok(SpectrumReport {
        m,
        n,
        sigmas,
        alphas_left,
        alphas_right,
        ratio_opt,
        ratio_l,
        ratio_r,
        u1,
        v1,
        v_rest,
        v_rest_antisymmetric,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinimaxReport {
    pub m: usize,
    pub trials: usize,
    /// Sampled `M′` with `⟨I/√m, M′⟩ < 1/√m − 1e-12`.
    pub identity_violations: usize,
    pub min_identity_dot: f64,
    /// Candidates `M` whose min-eigenvector adversary failed to push
    /// `⟨M, qqᵀ⟩` below `1/√m`.
    pub adversary_failures: usize,
    pub max_adversary_dot: f64,
}

impl MinimaxReport {
    pub fn passed(&self) -> bool {
        self.identity_violations == 0 && self.adversary_failures == 0
    }
}

/// Random unit-Frobenius PSD matrix `AAᵀ/‖AAᵀ‖` with `A` Gaussian `m×r`,
/// `r` uniform in `1..=m`.
pub fn random_unit_psd<R: rand::Rng + ?Sized>(m: usize, rng: &mut R) -> DenseMatrix {
    let r = rng.random_range(1..=m);
    let a = DenseMatrix::from_fn(m, r, |_, _| StandardNormal.sample(rng));
    let p = a.gram_rows();
    let f = p.frobenius_norm();
    p.scale(1.0 / f)
}

/// Checks that `I/√m` maximizes `min_{M′} ⟨M, M′⟩` over unit-norm PSD
/// matrices: (a) it scores at least `1/√m` against every sample, and (b)
/// every other sampled `M` loses to `M′ = qqᵀ` built from its
/// minimum-eigenvalue eigenvector.
pub fn identity_minimax_check(m: usize, trials: usize, seed_value: u64) -> Result<MinimaxReport> {
    if trials == 0 || m == 0 {
        return Err(Error::InvalidArgument("need m ≥ 1 and at least one trial".into()));
    }
    let bound = 1.0 / (m as f64).sqrt();
    let mut report = MinimaxReport {
        m,
        trials,
        identity_violations: 0,
        min_identity_dot: f64::INFINITY,
        adversary_failures: 0,
        max_adversary_dot: f64::NEG_INFINITY,
    };
    for t in 0..trials {
        let mut rng = seed::stream(seed_value, "minimax", t as u64);
        let mp = random_unit_psd(m, &mut rng);
        let d = mp.trace() * bound;
        report.min_identity_dot = report.min_identity_dot.min(d);
        if d < bound - 1e-12 {
            report.identity_violations += 1;
        }

        let cand = random_unit_psd(m, &mut rng);
        let e = symmetric_eigen(&cand)?;
        let q = e.vector(0);
        let adv = dot(&q, &cand.matvec(&q)?);
        report.max_adversary_dot = report.max_adversary_dot.max(adv);
        if adv >= bound {
            report.adversary_failures += 1;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curvature::{assemble, shampoo_sq_factors, CurvatureSource};
    use crate::kronalg::{kron, Provenance};
    use crate::models::GradientEnsemble;

    #[test]
    fn cosine_examples() {
        let m = DenseMatrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]);
        assert!((cosine_similarity(&m, &m).unwrap() - 1.0).abs() < 1e-15);
        let a = DenseMatrix::from_diag(&[1.0, 0.0]);
        let b = DenseMatrix::from_diag(&[0.0, 1.0]);
        assert_eq!(cosine_similarity(&a, &b).unwrap(), 0.0);
        let c = cosine_similarity(&DenseMatrix::identity(2), &a).unwrap();
        assert!((c - 0.5_f64.sqrt()).abs() < 1e-15);
        assert!(cosine_similarity(&a, &DenseMatrix::zeros(2, 2)).is_err());
    }

    #[test]
    fn kron_cosine_matches_dense() {
        let g1 = DenseMatrix::from_rows(&[&[1.0, -2.0, 0.5], &[0.0, 1.0, 3.0]]);
        let g2 = DenseMatrix::from_rows(&[&[2.0, 0.0, 1.0], &[-1.0, 1.0, 0.0]]);
        let e = GradientEnsemble::uniform(vec![g1, g2]).unwrap();
        let h = assemble(&e);
        let k = shampoo_sq_factors(&e);
        let dense = cosine_similarity(&k.to_dense(), &h.h).unwrap();
        let fast = cosine_similarity_kron(&k, &h).unwrap();
        assert!((dense - fast).abs() < 1e-12);
    }

    #[test]
    fn hutchinson_zero_operator() {
        let mut z = DenseMatrix::zeros(5, 5);
        assert_eq!(hutchinson_frobenius(&mut z, 10, 1).unwrap(), 0.0);
    }

    #[test]
    fn probe_cosine_exact_norm_proportional() {
        let l = DenseMatrix::from_rows(&[&[2.0, 0.5], &[0.5, 1.0]]);
        let r = DenseMatrix::from_rows(&[&[1.0, 0.2, 0.0], &[0.2, 3.0, 0.1], &[0.0, 0.1, 1.0]]);
        let k = KronFactors::new(l.clone(), r.clone(), Provenance::Custom).unwrap();
        let mut h = CurvatureMatrix::new(2, 3, kron(&r, &l).scale(4.0), CurvatureSource::Ensemble).unwrap();
        let hn = h.h.frobenius_norm();
        let c = probe_cosine(&mut h, &k, 5, 3, Some(hn)).unwrap();
        assert!((c - 1.0).abs() < 1e-10);
    }

    #[test]
    fn bank_single_gradient_along_probe() {
        let g = vec![3.0, 4.0];
        let mut bank = ProbeBank::with_probes(2, vec![vec![0.6, 0.8]]);
        bank.adagrad_hv(&g).unwrap();
        assert!((bank.products()[0][0] - 15.0).abs() < 1e-12);
        assert!((bank.products()[0][1] - 20.0).abs() < 1e-12);
        assert!(bank.adagrad_hv(&[1.0]).is_err());
    }

    #[test]
    fn spectrum_of_kron_product() {
        let l = DenseMatrix::from_rows(&[&[2.0, 0.5], &[0.5, 1.0]]);
        let r = DenseMatrix::from_rows(&[&[1.0, 0.2, 0.0], &[0.2, 3.0, 0.1], &[0.0, 0.1, 1.0]]);
        let h = CurvatureMatrix::new(2, 3, kron(&r, &l), CurvatureSource::Ensemble).unwrap();
        let rep = spectrum_report(&h).unwrap();
        assert!((rep.ratio_opt - 1.0).abs() < 1e-10);
        assert!((rep.ratio_l - 1.0).abs() < 1e-10);
        assert!((rep.ratio_r - 1.0).abs() < 1e-10);
    }

    #[test]
    fn minimax_equality_cases() {
        let m = 4;
        let b = 1.0 / (m as f64).sqrt();
        let i = DenseMatrix::identity(m).scale(b);
        assert!((i.trace() * b - 1.0).abs() < 1e-15);
        let mut e = DenseMatrix::zeros(m, m);
        e.as_mut_slice()[0] = 1.0;
        assert!((e.trace() * b - b).abs() < 1e-15);
        let rep = identity_minimax_check(m, 200, 9).unwrap();
        assert!(rep.passed(), "{rep:?}");
    }
}
