//! CSV records, manifests and atomic file writes.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::HarnessError;

pub const CSV_HEADER: &str = "step,target,estimator,cosine,method,batch_size,label_mode,seed";
pub const MANIFEST_VERSION: u32 = 1;

/// One CSV row. `cosine` also carries the spectrum ratios of `figure2` runs.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeRecord {
    pub step: Option<usize>,
    pub target: String,
    pub estimator: String,
    pub cosine: f64,
    pub method: String,
    pub batch_size: Option<usize>,
    pub label_mode: Option<String>,
    pub seed: Option<u64>,
    /// Seconds spent building and scoring the estimator; not written out.
    pub wall_time: f64,
}

/// Scientific notation with 17 significant digits.
pub fn format_float(x: f64) -> String {
    format!("{x:.16e}")
}

fn opt<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map(ToString::to_string).unwrap_or_default()
}

pub fn render_csv(rows: &[ProbeRecord]) -> String {
    let mut out = String::with_capacity(64 * (rows.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            opt(&r.step),
            r.target,
            r.estimator,
            format_float(r.cosine),
            r.method,
            opt(&r.batch_size),
            opt(&r.label_mode),
            opt(&r.seed),
        ));
    }
    out
}

pub fn parse_csv(text: &str) -> Result<Vec<ProbeRecord>, HarnessError> {
    let bad = |line: usize, msg: String| HarnessError::Validation(format!("csv line {line}: {msg}"));
    let mut lines = text.split('\n');
    match lines.next() {
        Some(h) if h == CSV_HEADER => {}
        Some(h) => return Err(bad(1, format!("header must be `{CSV_HEADER}`, found `{h}`"))),
        None => return Err(bad(1, "empty file".into())),
    }
    let mut rows = Vec::new();
    for (k, line) in lines.enumerate() {
        let ln = k + 2;
        if line.is_empty() {
            continue;
        }
        if line.ends_with('\r') {
            return Err(bad(ln, "CRLF line endings are not allowed".into()));
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 8 {
            return Err(bad(ln, format!("expected 8 fields, found {}", f.len())));
        }
        let parse_usize = |s: &str, what: &str| -> Result<Option<usize>, HarnessError> {
            if s.is_empty() {
                return Ok(None);
            }
            s.parse().map(Some).map_err(|_| bad(ln, format!("{what} `{s}` is not an integer")))
        };
        let cosine: f64 = f[3].parse().map_err(|_| bad(ln, format!("cosine `{}` is not a number", f[3])))?;
        if !cosine.is_finite() {
            return Err(bad(ln, "cosine must be finite".into()));
        }
        if f[1].is_empty() || f[2].is_empty() || f[4].is_empty() {
            return Err(bad(ln, "target, estimator and method are required".into()));
        }
        let seed = if f[7].is_empty() {
            None
        } else {
            Some(f[7].parse().map_err(|_| bad(ln, format!("seed `{}` is not an integer", f[7])))?)
        };
        rows.push(ProbeRecord {
            step: parse_usize(f[0], "step")?,
            target: f[1].to_string(),
            estimator: f[2].to_string(),
            cosine,
            method: f[4].to_string(),
            batch_size: parse_usize(f[5], "batch_size")?,
            label_mode: (!f[6].is_empty()).then(|| f[6].to_string()),
            seed,
            wall_time: 0.0,
        });
    }
    Ok(rows)
}

/// Writes through a temporary file in the destination directory and renames
/// it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), HarnessError> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    };
    std::fs::create_dir_all(&dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(&dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| HarnessError::Io(format!("{}: {}", path.display(), e.error)))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputFile {
    pub file: String,
    pub rows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub manifest_version: u32,
    pub tool: String,
    pub tool_version: String,
    pub command: String,
    pub master_seed: u64,
    pub config: ExperimentConfig,
    pub outputs: Vec<OutputFile>,
    pub wall_seconds: f64,
}

impl Manifest {
    pub fn new(command: &str, config: &ExperimentConfig) -> Self {
        Self {
            manifest_version: MANIFEST_VERSION,
            tool: env!("CARGO_PKG_NAME").into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            master_seed: config.master_seed(),
            config: config.clone(),
            outputs: Vec::new(),
            wall_seconds: 0.0,
        }
    }

    pub fn write(&self, dir: &Path) -> Result<(), HarnessError> {
        let mut text = serde_json::to_string_pretty(self).map_err(|e| HarnessError::Io(e.to_string()))?;
        text.push('\n');
        write_atomic(&dir.join("manifest.json"), text.as_bytes())
    }
}
