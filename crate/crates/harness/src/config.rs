//! Experiment configuration: one JSON document, unknown keys rejected.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::de::{self, Deserializer, Visitor};
use serde::{Deserialize, Serialize, Serializer};
use shampoo_kron::curvature::DEFAULT_POWER_STEPS;
use shampoo_kron::data::Normalization;
use shampoo_kron::metrics::DEFAULT_NUM_PROBES;
use shampoo_kron::models::{LabelMode, ModelConfig, MAX_PROBE_SIZE};
use shampoo_kron::optim::TrainConfig;

use crate::error::HarnessError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    pub dataset: DatasetSpec,
    pub estimators: Vec<EstimatorSpec>,
    pub curvature_targets: Vec<Target>,
    #[serde(default)]
    pub batch_sweep: Vec<usize>,
    #[serde(default)]
    pub label_modes: Vec<LabelMode>,
    #[serde(default)]
    pub probes: ProbeSettings,
    #[serde(default)]
    pub batches: BatchSettings,
    /// Master seed. When set it replaces `model.init_seed`, `train.seed` and
    /// the synthetic dataset seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetSpec {
    Synth(SynthSpec),
    Idx(IdxSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub dim: usize,
    pub num_classes: usize,
    pub per_class: usize,
    pub separation: f64,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdxSpec {
    pub images: PathBuf,
    pub labels: PathBuf,
    #[serde(default)]
    pub normalization: Normalization,
    /// Classes to keep, relabeled `0..k` in the listed order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub keep: Option<Vec<usize>>,
    /// Average-pool factor applied to both image axes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub downsample: Option<usize>,
    /// Keep only the first `limit` examples (after class filtering).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub limit: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EstimatorSpec {
    Shampoo,
    ShampooSq,
    OptKron(usize),
    Kfac,
}

impl EstimatorSpec {
    /// Column value in the CSV.
    pub fn name(self) -> String {
        match self {
            EstimatorSpec::Shampoo => "shampoo".into(),
            EstimatorSpec::ShampooSq => "shampoo_sq".into(),
            EstimatorSpec::OptKron(k) => format!("opt_kron_{k}"),
            EstimatorSpec::Kfac => "kfac".into(),
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "shampoo" => return Some(EstimatorSpec::Shampoo),
            "shampoo_sq" => return Some(EstimatorSpec::ShampooSq),
            "kfac" => return Some(EstimatorSpec::Kfac),
            "opt_kron" => return Some(EstimatorSpec::OptKron(DEFAULT_POWER_STEPS)),
            _ => {}
        }
        let k = s
            .strip_prefix("opt_kron_")
            .or_else(|| s.strip_prefix("opt_kron(").and_then(|r| r.strip_suffix(')')))?;
        match k.parse::<usize>() {
            Ok(k) if k > 0 => Some(EstimatorSpec::OptKron(k)),
            _ => None,
        }
    }
}

impl Serialize for EstimatorSpec {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.name())
    }
}

impl<'de> Deserialize<'de> for EstimatorSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct V;
        impl Visitor<'_> for V {
            type Value = EstimatorSpec;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("one of \"shampoo\", \"shampoo_sq\", \"kfac\", \"opt_kron\" or \"opt_kron(k)\"")
            }
            fn visit_str<E: de::Error>(self, v: &str) -> Result<EstimatorSpec, E> {
                EstimatorSpec::parse(v).ok_or_else(|| E::invalid_value(de::Unexpected::Str(v), &self))
            }
        }
        d.deserialize_str(V)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Gn,
    Adagrad,
}

impl Target {
    pub fn name(self) -> &'static str {
        match self {
            Target::Gn => "gn",
            Target::Adagrad => "adagrad",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeMethod {
    /// Dense curvature whenever the probe layer allows it.
    #[default]
    Auto,
    Exact,
    Hutchinson,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeSettings {
    pub method: ProbeMethod,
    pub count: usize,
}

impl Default for ProbeSettings {
    fn default() -> Self {
        Self {
            method: ProbeMethod::Auto,
            count: DEFAULT_NUM_PROBES,
        }
    }
}

impl ProbeSettings {
    /// `Exact` or `Hutchinson` for a probe layer with `dim` entries.
    pub fn resolve(&self, dim: usize) -> ProbeMethod {
        match self.method {
            ProbeMethod::Auto if dim <= MAX_PROBE_SIZE => ProbeMethod::Exact,
            ProbeMethod::Auto => ProbeMethod::Hutchinson,
            other => other,
        }
    }
}

/// Batch-size sweep settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct BatchSettings {
    /// Monte Carlo batches per point; 0 uses the closed-form batch ensembles.
    pub trials: usize,
    /// Training step whose weights are probed; `None` means the last step.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<usize>,
}

/// Which subcommand a config is validated for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Figure {
    One,
    Two,
    Four,
}

impl ExperimentConfig {
    /// Parses a config, or the `config` of a manifest written by a previous run.
    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| HarnessError::Validation(format!("config: {e}")))?;
        if value.get("manifest_version").is_some() {
            let inner = value
                .get("config")
                .cloned()
                .ok_or_else(|| HarnessError::Validation("manifest has no `config` key".into()))?;
            return serde_json::from_value(inner)
                .map_err(|e| HarnessError::Validation(format!("manifest config: {e}")));
        }
        serde_json::from_str(text).map_err(|e| HarnessError::Validation(format!("config: {e}")))
    }

    /// Reads a config file; relative dataset paths are taken relative to it.
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Validation(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        if let DatasetSpec::Idx(idx) = &mut cfg.dataset {
            let base = path.parent().unwrap_or(Path::new("."));
            for p in [&mut idx.images, &mut idx.labels] {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    /// Applies the master seed (from the command line if given) to every
    /// component seed.
    pub fn apply_seed(&mut self, cli_seed: Option<u64>) {
        if cli_seed.is_some() {
            self.seed = cli_seed;
        }
        if let Some(s) = self.seed {
            self.model.init_seed = s;
            self.train.seed = s;
            if let DatasetSpec::Synth(syn) = &mut self.dataset {
                syn.seed = s;
            }
        }
    }

    /// Seed reported in the CSV `seed` column.
    pub fn master_seed(&self) -> u64 {
        self.seed.unwrap_or(self.train.seed)
    }

    pub fn validate(&self, figure: Figure) -> Result<(), HarnessError> {
        let bad = |key: &str, msg: String| Err(HarnessError::Validation(format!("config key `{key}`: {msg}")));
        if let Err(e) = self.model.validate() {
            return bad("model", e.to_string());
        }
        if let Err(e) = self.train.validate() {
            return bad("train", e.to_string());
        }
        if self.estimators.is_empty() {
            return bad("estimators", "at least one estimator is required".into());
        }
        if self.curvature_targets.is_empty() {
            return bad("curvature_targets", "at least one target is required".into());
        }
        for (i, e) in self.estimators.iter().enumerate() {
            if self.estimators[..i].contains(e) {
                return bad("estimators", format!("`{}` listed twice", e.name()));
            }
        }
        for (i, t) in self.curvature_targets.iter().enumerate() {
            if self.curvature_targets[..i].contains(t) {
                return bad("curvature_targets", format!("`{}` listed twice", t.name()));
            }
        }
        if self.probes.count == 0 {
            return bad("probes.count", "must be positive".into());
        }
        match &self.dataset {
            DatasetSpec::Synth(s) => {
                if s.dim != self.model.input_dim {
                    return bad(
                        "dataset.synth.dim",
                        format!("{} does not match model.input_dim {}", s.dim, self.model.input_dim),
                    );
                }
                if s.num_classes != self.model.num_classes {
                    return bad(
                        "dataset.synth.num_classes",
                        format!("{} does not match model.num_classes {}", s.num_classes, self.model.num_classes),
                    );
                }
                if s.per_class == 0 {
                    return bad("dataset.synth.per_class", "must be positive".into());
                }
                if !(s.separation >= 0.0 && s.separation.is_finite()) {
                    return bad("dataset.synth.separation", format!("must be >= 0, got {}", s.separation));
                }
            }
            DatasetSpec::Idx(idx) => {
                for (key, p) in [("dataset.idx.images", &idx.images), ("dataset.idx.labels", &idx.labels)] {
                    if !p.is_file() {
                        return bad(key, format!("{} does not exist", p.display()));
                    }
                }
                if idx.limit == Some(0) {
                    return bad("dataset.idx.limit", "must be positive".into());
                }
            }
        }
        match figure {
            Figure::One => {}
            Figure::Two => {
                let (m, n) = self.model.probe_shape();
                if m * n > MAX_PROBE_SIZE {
                    return bad("model", format!("spectra need mn <= {MAX_PROBE_SIZE}, got {}", m * n));
                }
            }
            Figure::Four => {
                if self.batch_sweep.is_empty() {
                    return bad("batch_sweep", "must list at least one batch size".into());
                }
                if self.batch_sweep.contains(&0) {
                    return bad("batch_sweep", "batch sizes must be positive".into());
                }
                if self.label_modes.is_empty() {
                    return bad("label_modes", "must list `real` and/or `sampled`".into());
                }
                if self.label_modes.contains(&LabelMode::Enumerated) {
                    return bad("label_modes", "`enumerated` is not a batch label mode".into());
                }
                if let Some(c) = self.batches.checkpoint {
                    if c > self.train.steps {
                        return bad(
                            "batches.checkpoint",
                            format!("{c} is past the last step {}", self.train.steps),
                        );
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn estimator_names_round_trip() {
        for s in ["shampoo", "shampoo_sq", "kfac", "opt_kron_3"] {
            assert_eq!(EstimatorSpec::parse(s).unwrap().name(), s);
        }
        assert_eq!(EstimatorSpec::parse("opt_kron(7)"), Some(EstimatorSpec::OptKron(7)));
        assert_eq!(EstimatorSpec::parse("opt_kron"), Some(EstimatorSpec::OptKron(5)));
        assert_eq!(EstimatorSpec::parse("opt_kron_0"), None);
        assert_eq!(EstimatorSpec::parse("shampoo2"), None);
    }
}
