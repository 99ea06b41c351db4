//! Figure runs: train a model, probe curvature estimators on a schedule and
//! collect CSV rows.

use std::time::Instant;

use shampoo_kron::curvature::{
    assemble, batch_covariance, gn_curvature, kfac_factors, opt_kron_factors, opt_kron_from_ensemble,
    real_label_batch_ensemble, shampoo_factors, shampoo_sq_factors, AdagradAccumulator, CurvatureMatrix,
    Expectation,
};
use shampoo_kron::data::{downsample, load_idx_files, subsample_classes, synth_gaussian_classes, Dataset};
use shampoo_kron::kronalg::{vec, KronFactors};
use shampoo_kron::linalg::{dot, DenseMatrix};
use shampoo_kron::metrics::{cosine_similarity_kron, probe_cosine, spectrum_report, FnOperator, ProbeBank, SpectrumReport};
use shampoo_kron::models::{gn_ensemble_exact, GradientEnsemble, LabelMode, Model, WeightedGradient};
use shampoo_kron::optim::{training_gradient, Optimizer};
use shampoo_kron::seed::derive_seed;

use crate::config::{DatasetSpec, EstimatorSpec, ExperimentConfig, Figure, ProbeMethod, Target};
use crate::error::HarnessError;
use crate::output::ProbeRecord;

/// Leave-one-group-out blocks for the Monte Carlo standard errors.
const JACKKNIFE_GROUPS: usize = 20;

pub fn load_dataset(spec: &DatasetSpec) -> Result<Dataset, HarnessError> {
    match spec {
        DatasetSpec::Synth(s) => Ok(synth_gaussian_classes(s.dim, s.num_classes, s.per_class, s.separation, s.seed)?),
        DatasetSpec::Idx(idx) => {
            let mut ds = load_idx_files(&idx.images, &idx.labels, idx.normalization)
                .map_err(|e| HarnessError::Validation(format!("dataset: {e}")))??;
            if let Some(keep) = &idx.keep {
                ds = subsample_classes(&ds, keep)?;
            }
            if let Some(f) = idx.downsample {
                ds = downsample(&ds, f)?;
            }
            if let Some(limit) = idx.limit {
                if limit < ds.len() {
                    let d = ds.input_dim();
                    let inputs = DenseMatrix::from_row_major(limit, d, ds.inputs.as_slice()[..limit * d].to_vec())?;
                    ds = Dataset {
                        inputs,
                        labels: ds.labels[..limit].to_vec(),
                        ..ds
                    };
                }
            }
            Ok(ds)
        }
    }
}

/// Model, dataset and optimizer for a validated config.
struct Setup {
    model: Model,
    ds: Dataset,
    opt: Optimizer,
}

fn setup(cfg: &ExperimentConfig, figure: Figure) -> Result<Setup, HarnessError> {
    cfg.validate(figure)?;
    let ds = load_dataset(&cfg.dataset)?;
    if ds.input_dim() != cfg.model.input_dim {
        return Err(HarnessError::Validation(format!(
            "dataset has {} features but model.input_dim is {}",
            ds.input_dim(),
            cfg.model.input_dim
        )));
    }
    if ds.num_classes != cfg.model.num_classes {
        return Err(HarnessError::Validation(format!(
            "dataset has {} classes but model.num_classes is {}",
            ds.num_classes, cfg.model.num_classes
        )));
    }
    let model = Model::new(cfg.model.clone())?;
    let opt = Optimizer::new(cfg.train.clone(), &model)?;
    Ok(Setup { model, ds, opt })
}

/// Running Adagrad statistics of the probe layer.
struct AdagradTracker {
    acc: AdagradAccumulator,
    bank: Option<ProbeBank>,
    history: Vec<DenseMatrix>,
}

/// Trains for `cfg.train.steps` steps and calls `probe` at every scheduled
/// step, after the step's gradient has entered the Adagrad sum and before
/// the weights move.
fn train_with_probes(
    cfg: &ExperimentConfig,
    s: &mut Setup,
    method: ProbeMethod,
    mut probe: impl FnMut(usize, &Model, &Dataset, Option<&AdagradTracker>) -> Result<(), HarnessError>,
) -> Result<(), HarnessError> {
    let (m, n) = s.model.probe_shape();
    let layer = cfg.model.probe_layer;
    let schedule = cfg.train.schedule();
    let mut tracker = if cfg.curvature_targets.contains(&Target::Adagrad) {
        let hutch = method == ProbeMethod::Hutchinson;
        Some(AdagradTracker {
            acc: AdagradAccumulator::new(m, n, !hutch)?,
            bank: if hutch {
                Some(ProbeBank::new(m * n, cfg.probes.count, derive_seed(cfg.master_seed(), "probe", 0))?)
            } else {
                None
            },
            history: Vec::new(),
        })
    } else {
        None
    };
    for t in 0..=cfg.train.steps {
        let grads = training_gradient(&s.model, &s.ds, &cfg.train, t)?;
        if let Some(tr) = tracker.as_mut() {
            let g = &grads[layer];
            tr.acc.update(g)?;
            if let Some(bank) = tr.bank.as_mut() {
                bank.adagrad_hv(&vec(g))?;
                tr.history.push(g.clone());
            }
        }
        if schedule.binary_search(&t).is_ok() {
            probe(t, &s.model, &s.ds, tracker.as_ref())?;
        }
        if t < cfg.train.steps {
            s.opt.step(&mut s.model, &grads)?;
        }
    }
    Ok(())
}

fn method_name(m: ProbeMethod) -> &'static str {
    match m {
        ProbeMethod::Hutchinson => "hutchinson",
        _ => "exact",
    }
}

fn check_cosine(c: f64) -> Result<f64, HarnessError> {
    if c.is_finite() && (-1.0 - 1e-12..=1.0 + 1e-12).contains(&c) {
        Ok(c.clamp(-1.0, 1.0))
    } else {
        Err(HarnessError::Numerical(shampoo_kron::Error::NonFinite("cosine")))
    }
}

/// Factors of one estimator for the Gauss–Newton target.
fn gn_estimator(
    spec: EstimatorSpec,
    ens: &GradientEnsemble,
    dense: Option<&CurvatureMatrix>,
    model: &Model,
    ds: &Dataset,
    seed: u64,
) -> Result<KronFactors, HarnessError> {
    Ok(match spec {
        EstimatorSpec::Shampoo => shampoo_factors(ens)?,
        EstimatorSpec::ShampooSq => shampoo_sq_factors(ens),
        EstimatorSpec::OptKron(k) => match dense {
            Some(h) => opt_kron_factors(h, k)?,
            None => opt_kron_from_ensemble(ens, k)?,
        },
        EstimatorSpec::Kfac => kfac_factors(model, ds, LabelMode::Enumerated, seed)?,
    })
}

/// `H·v` for `H = E[vec(G)vec(G)ᵀ]` without forming `H`.
fn ensemble_operator(ens: &GradientEnsemble) -> impl FnMut(&[f64]) -> shampoo_kron::Result<Vec<f64>> {
    let vecs: Vec<(f64, Vec<f64>)> = ens.samples().iter().map(|s| (s.weight, vec(&s.grad))).collect();
    move |v: &[f64]| {
        let mut out = vec![0.0; v.len()];
        for (w, g) in &vecs {
            let c = w * dot(g, v);
            out.iter_mut().zip(g).for_each(|(o, gi)| *o += c * gi);
        }
        Ok(out)
    }
}

fn sort_records(rows: &mut [ProbeRecord]) {
    rows.sort_by(|a, b| {
        (a.step, &a.target, &a.estimator, &a.label_mode, a.batch_size)
            .cmp(&(b.step, &b.target, &b.estimator, &b.label_mode, b.batch_size))
    });
}

/// Cosine of every estimator against `H_GN` and `H_Ada` over training.
pub fn run_figure1(cfg: &ExperimentConfig) -> Result<Vec<ProbeRecord>, HarnessError> {
    let mut s = setup(cfg, Figure::One)?;
    let (m, n) = s.model.probe_shape();
    let method = cfg.probes.resolve(m * n);
    let master = cfg.master_seed();
    let train_batch = if cfg.train.batch_size == 0 { s.ds.len() } else { cfg.train.batch_size };
    let mut rows = Vec::new();
    train_with_probes(cfg, &mut s, method, |t, model, ds, ada| {
        let record = |target: Target, est: EstimatorSpec, cosine: f64, start: Instant| ProbeRecord {
            step: Some(t),
            target: target.name().into(),
            estimator: est.name(),
            cosine,
            method: method_name(method).into(),
            batch_size: (target == Target::Adagrad).then_some(train_batch),
            label_mode: Some(if target == Target::Gn { "enumerated" } else { "real" }.into()),
            seed: Some(master),
            wall_time: start.elapsed().as_secs_f64(),
        };
        for &target in &cfg.curvature_targets {
            match target {
                Target::Gn => {
                    let ens = gn_ensemble_exact(model, ds)?;
                    let dense = (method == ProbeMethod::Exact).then(|| assemble(&ens));
                    let probe_seed = derive_seed(master, "probe", t as u64 + 1);
                    for &est in &cfg.estimators {
                        let start = Instant::now();
                        let f = gn_estimator(est, &ens, dense.as_ref(), model, ds, master)?;
                        let c = match &dense {
                            Some(h) => cosine_similarity_kron(&f, h)?,
                            None => {
                                let mut op = FnOperator {
                                    dim: m * n,
                                    f: ensemble_operator(&ens),
                                };
                                probe_cosine(&mut op, &f, cfg.probes.count, probe_seed, None)?
                            }
                        };
                        rows.push(record(target, est, check_cosine(c)?, start));
                    }
                }
                Target::Adagrad => {
                    let tr = ada.expect("tracker exists when adagrad is a target");
                    let dense = tr.acc.exact();
                    for &est in &cfg.estimators {
                        let start = Instant::now();
                        let f = match est {
                            EstimatorSpec::Shampoo => tr.acc.shampoo()?,
                            EstimatorSpec::ShampooSq => tr.acc.shampoo_sq(),
                            EstimatorSpec::OptKron(k) => match &dense {
                                Some(h) => opt_kron_factors(h, k)?,
                                None => opt_kron_from_ensemble(&GradientEnsemble::uniform(tr.history.clone())?, k)?,
                            },
                            // K-FAC is defined through the model's output distribution only
                            EstimatorSpec::Kfac => continue,
                        };
                        let c = match (&dense, &tr.bank) {
                            (Some(h), _) => cosine_similarity_kron(&f, h)?,
                            (None, Some(bank)) => bank.probe_cosine(&f)?,
                            (None, None) => unreachable!("tracker keeps either the dense sum or a probe bank"),
                        };
                        rows.push(record(target, est, check_cosine(c)?, start));
                    }
                }
            }
        }
        Ok(())
    })?;
    sort_records(&mut rows);
    Ok(rows)
}

/// Spectrum of one target at one probe step.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct StepSpectrum {
    pub step: usize,
    pub target: String,
    pub report: SpectrumReport,
}

pub struct Figure2Output {
    pub records: Vec<ProbeRecord>,
    pub spectra: Vec<StepSpectrum>,
}

/// `ratio_opt`, `ratio_l` and `ratio_r` per probe step and target.
pub fn run_figure2(cfg: &ExperimentConfig) -> Result<Figure2Output, HarnessError> {
    let mut s = setup(cfg, Figure::Two)?;
    let master = cfg.master_seed();
    let mut records = Vec::new();
    let mut spectra = Vec::new();
    train_with_probes(cfg, &mut s, ProbeMethod::Exact, |t, model, ds, ada| {
        for &target in &cfg.curvature_targets {
            let start = Instant::now();
            let h = match target {
                Target::Gn => gn_curvature(model, ds)?,
                Target::Adagrad => ada
                    .and_then(|tr| tr.acc.exact())
                    .expect("dense Adagrad sum is tracked for spectra"),
            };
            let report = spectrum_report(&h)?;
            let elapsed = start.elapsed().as_secs_f64();
            for (name, value) in [
                ("ratio_opt", report.ratio_opt),
                ("ratio_l", report.ratio_l),
                ("ratio_r", report.ratio_r),
            ] {
                records.push(ProbeRecord {
                    step: Some(t),
                    target: target.name().into(),
                    estimator: name.into(),
                    cosine: check_cosine(value)?,
                    method: "exact".into(),
                    batch_size: None,
                    label_mode: None,
                    seed: Some(master),
                    wall_time: elapsed,
                });
            }
            spectra.push(StepSpectrum {
                step: t,
                target: target.name().into(),
                report,
            });
        }
        Ok(())
    })?;
    sort_records(&mut records);
    Ok(Figure2Output { records, spectra })
}

/// One batch-sweep point; `stderr` is set for Monte Carlo points.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchPoint {
    pub record: ProbeRecord,
    pub stderr: Option<f64>,
}

fn batch_estimator(spec: EstimatorSpec, ens: &GradientEnsemble) -> Result<KronFactors, HarnessError> {
    Ok(match spec {
        EstimatorSpec::Shampoo => shampoo_factors(ens)?,
        EstimatorSpec::ShampooSq => shampoo_sq_factors(ens),
        EstimatorSpec::OptKron(k) => opt_kron_from_ensemble(ens, k)?,
        EstimatorSpec::Kfac => unreachable!("filtered by caller"),
    })
}

/// Ensemble without the samples of group `g` (of `groups`), reweighted.
fn leave_group_out(ens: &GradientEnsemble, g: usize, groups: usize) -> Result<GradientEnsemble, HarnessError> {
    let total = ens.len();
    let kept: Vec<WeightedGradient> = ens
        .samples()
        .iter()
        .enumerate()
        .filter(|(i, _)| i * groups / total != g)
        .map(|(_, s)| s.clone())
        .collect();
    let z: f64 = kept.iter().map(|s| s.weight).sum();
    let (m, n) = ens.shape();
    let kept = kept
        .into_iter()
        .map(|s| WeightedGradient {
            weight: s.weight / z,
            ..s
        })
        .collect();
    Ok(GradientEnsemble::new(m, n, kept)?)
}

/// Estimators built from mini-batch gradient covariances against the exact
/// `H_GN`, over the batch sizes and label modes of the config, at one
/// checkpoint.
pub fn run_figure4(cfg: &ExperimentConfig) -> Result<Vec<BatchPoint>, HarnessError> {
    let mut s = setup(cfg, Figure::Four)?;
    let checkpoint = cfg.batches.checkpoint.unwrap_or(cfg.train.steps);
    for t in 0..checkpoint {
        let grads = training_gradient(&s.model, &s.ds, &cfg.train, t)?;
        s.opt.step(&mut s.model, &grads)?;
    }
    let (model, ds) = (&s.model, &s.ds);
    let master = cfg.master_seed();
    let h = gn_curvature(model, ds)?;
    let estimators: Vec<EstimatorSpec> =
        cfg.estimators.iter().copied().filter(|e| *e != EstimatorSpec::Kfac).collect();
    let mut points = Vec::new();
    for &labels in &cfg.label_modes {
        for &b in &cfg.batch_sweep {
            let (ens, method) = if cfg.batches.trials == 0 {
                let ens = match labels {
                    LabelMode::Real => real_label_batch_ensemble(model, ds, b)?,
                    // |B|·E[G_B G_Bᵀ] does not depend on |B| for sampled labels
                    _ => gn_ensemble_exact(model, ds)?,
                };
                (ens, "exact")
            } else {
                let cov = batch_covariance(
                    model,
                    ds,
                    b,
                    labels,
                    Expectation::MonteCarlo {
                        trials: cfg.batches.trials,
                        seed: master,
                    },
                )?;
                (cov.ensemble, "monte_carlo")
            };
            for &est in &estimators {
                let start = Instant::now();
                let c = check_cosine(cosine_similarity_kron(&batch_estimator(est, &ens)?, &h)?)?;
                let stderr = if method == "monte_carlo" && ens.len() >= 2 {
                    let groups = JACKKNIFE_GROUPS.min(ens.len());
                    let reps = (0..groups)
                        .map(|g| {
                            let sub = leave_group_out(&ens, g, groups)?;
                            Ok(cosine_similarity_kron(&batch_estimator(est, &sub)?, &h)?)
                        })
                        .collect::<Result<Vec<f64>, HarnessError>>()?;
                    let mean = reps.iter().sum::<f64>() / groups as f64;
                    let ss: f64 = reps.iter().map(|r| (r - mean).powi(2)).sum();
                    Some((ss * (groups - 1) as f64 / groups as f64).sqrt())
                } else {
                    None
                };
                points.push(BatchPoint {
                    record: ProbeRecord {
                        step: Some(checkpoint),
                        target: Target::Gn.name().into(),
                        estimator: est.name(),
                        cosine: c,
                        method: method.into(),
                        batch_size: Some(b),
                        label_mode: Some(labels.label().into()),
                        seed: Some(master),
                        wall_time: start.elapsed().as_secs_f64(),
                    },
                    stderr,
                });
            }
        }
    }
    points.sort_by(|a, b| {
        let (x, y) = (&a.record, &b.record);
        (&x.label_mode, x.batch_size, &x.estimator).cmp(&(&y.label_mode, y.batch_size, &y.estimator))
    });
    Ok(points)
}
