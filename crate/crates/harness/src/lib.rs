//! Experiment harness: trains the small models of `shampoo-kron`, measures
//! how well each Kronecker-factored estimator matches the true curvature,
//! and writes CSV, SVG and a replayable manifest.

pub mod config;
pub mod error;
pub mod experiments;
pub mod output;
pub mod plot;
pub mod selftest;

use std::path::{Path, PathBuf};
use std::time::Instant;

use shampoo_kron::data::{synth_gaussian_classes, Normalization};

use config::{ExperimentConfig, SynthSpec};
use error::HarnessError;
use output::{render_csv, write_atomic, Manifest, OutputFile, ProbeRecord};
use plot::{render_svg, PlotSpec};

const BUILTIN: [(&str, &str); 5] = [
    ("figure1", include_str!("../configs/figure1.json")),
    ("figure2", include_str!("../configs/figure2.json")),
    ("figure4", include_str!("../configs/figure4.json")),
    ("binary", include_str!("../configs/binary.json")),
    ("gen-data", include_str!("../configs/gen-data.json")),
];

fn builtin_text(name: &str) -> Result<&'static str, HarnessError> {
    BUILTIN
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, t)| *t)
        .ok_or_else(|| HarnessError::Validation(format!("no built-in config named `{name}`")))
}

/// One of the bundled configs: `figure1`, `figure2`, `figure4` or `binary`.
pub fn builtin_config(name: &str) -> Result<ExperimentConfig, HarnessError> {
    ExperimentConfig::from_json(builtin_text(name)?)
}

/// Loads `path`, or the built-in config for `command`, then applies the seed.
pub fn resolve_config(
    command: &str,
    path: Option<&Path>,
    seed: Option<u64>,
) -> Result<ExperimentConfig, HarnessError> {
    let mut cfg = match path {
        Some(p) => ExperimentConfig::load(p)?,
        None => builtin_config(command)?,
    };
    cfg.apply_seed(seed);
    Ok(cfg)
}

/// `--out`, else `output_dir` from the config, else `results/<command>`.
pub fn output_dir(cfg: &ExperimentConfig, out: Option<PathBuf>, command: &str) -> PathBuf {
    out.or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("results").join(command))
}

fn write_table(
    dir: &Path,
    stem: &str,
    title: &str,
    rows: &[ProbeRecord],
    manifest: &mut Manifest,
) -> Result<(), HarnessError> {
    let csv = format!("{stem}.csv");
    write_atomic(&dir.join(&csv), render_csv(rows).as_bytes())?;
    manifest.outputs.push(OutputFile { file: csv, rows: rows.len() });
    let spec = PlotSpec {
        title: title.into(),
        ..PlotSpec::default()
    };
    let svg = format!("{stem}.svg");
    write_atomic(&dir.join(&svg), render_svg(rows, &spec)?.as_bytes())?;
    manifest.outputs.push(OutputFile { file: svg, rows: 0 });
    Ok(())
}

/// Runs `figure1`, `figure2` or `figure4` and writes its files into `dir`.
pub fn run_command(command: &str, cfg: &ExperimentConfig, dir: &Path) -> Result<Manifest, HarnessError> {
    let start = Instant::now();
    let mut manifest = Manifest::new(command, cfg);
    match command {
        "figure1" => {
            let rows = experiments::run_figure1(cfg)?;
            write_table(dir, "figure1", "cosine to true curvature", &rows, &mut manifest)?;
        }
        "figure2" => {
            let out = experiments::run_figure2(cfg)?;
            write_table(dir, "figure2", "one-step power iteration overlap", &out.records, &mut manifest)?;
            let mut json = serde_json::to_string_pretty(&out.spectra).map_err(|e| HarnessError::Io(e.to_string()))?;
            json.push('\n');
            write_atomic(&dir.join("figure2_spectra.json"), json.as_bytes())?;
            manifest.outputs.push(OutputFile {
                file: "figure2_spectra.json".into(),
                rows: out.spectra.len(),
            });
        }
        "figure4" => {
            let rows: Vec<ProbeRecord> = experiments::run_figure4(cfg)?.into_iter().map(|p| p.record).collect();
            write_table(dir, "figure4", "cosine to H_GN by batch size", &rows, &mut manifest)?;
        }
        other => return Err(HarnessError::Validation(format!("unknown experiment `{other}`"))),
    }
    manifest.wall_seconds = start.elapsed().as_secs_f64();
    manifest.write(dir)?;
    Ok(manifest)
}

/// Writes a synthetic dataset as IDX files. Inputs are mapped affinely onto
/// `0..=255` and rounded, so reading back with `scale255` gives `[0, 1]`.
pub fn gen_data(spec: &SynthSpec, dir: &Path) -> Result<(), HarnessError> {
    let mut ds = synth_gaussian_classes(spec.dim, spec.num_classes, spec.per_class, spec.separation, spec.seed)?;
    let (lo, hi) = ds
        .inputs
        .as_slice()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    for x in ds.inputs.as_mut_slice() {
        *x = ((*x - lo) / span * 255.0).round() / 255.0;
    }
    let side = (spec.dim as f64).sqrt().round() as usize;
    ds.image_shape = Some(if side * side == spec.dim { (side, side) } else { (1, spec.dim) });
    ds.normalization = Normalization::Scale255;
    let (img, lab) = ds.to_idx_bytes()?;
    write_atomic(&dir.join("images.idx"), &img)?;
    write_atomic(&dir.join("labels.idx"), &lab)?;
    let mut json = serde_json::to_string_pretty(spec).map_err(|e| HarnessError::Io(e.to_string()))?;
    json.push('\n');
    write_atomic(&dir.join("gen-data.json"), json.as_bytes())
}

pub fn load_gen_data_spec(path: Option<&Path>, seed: Option<u64>) -> Result<SynthSpec, HarnessError> {
    let text = match path {
        Some(p) => std::fs::read_to_string(p)
            .map_err(|e| HarnessError::Validation(format!("cannot read {}: {e}", p.display())))?,
        None => builtin_text("gen-data")?.to_string(),
    };
    let mut spec: SynthSpec =
        serde_json::from_str(&text).map_err(|e| HarnessError::Validation(format!("config: {e}")))?;
    if let Some(s) = seed {
        spec.seed = s;
    }
    Ok(spec)
}
