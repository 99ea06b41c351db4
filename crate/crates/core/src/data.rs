//! Datasets: MNIST IDX parsing, class subsampling and a seeded synthetic
//! Gaussian-class generator.

use std::path::Path;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::seed;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    None,
    #[default]
    Scale255,
    Standardize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// N×d inputs, one row per example.
    pub inputs: DenseMatrix,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub normalization: Normalization,
    /// Image geometry when the rows are flattened images.
    pub image_shape: Option<(usize, usize)>,
}

impl Dataset {
    pub fn new(inputs: DenseMatrix, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        let ds = Self {
            inputs,
            labels,
            num_classes,
            normalization: Normalization::None,
            image_shape: None,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.labels.is_empty() {
            return Err(Error::InvalidArgument("dataset must contain at least one example".into()));
        }
        if self.inputs.rows() != self.labels.len() {
            return Err(Error::CountMismatch {
                images: self.inputs.rows(),
                labels: self.labels.len(),
            });
        }
        if let Some(&bad) = self.labels.iter().find(|&&y| y >= self.num_classes) {
            return Err(Error::InvalidArgument(format!(
                "label {bad} outside [0, {})",
                self.num_classes
            )));
        }
        if !self.inputs.is_finite() {
            return Err(Error::NonFinite("dataset inputs"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.cols()
    }

    pub fn input(&self, i: usize) -> &[f64] {
        self.inputs.row(i)
    }

    /// Serializes to a pair of IDX streams (images, labels), undoing the
    /// input scaling. Values must be integral in [0, 255] after unscaling.
    pub fn to_idx_bytes(&self) -> Result<(Vec<u8>, Vec<u8>)> {
        let scale = match self.normalization {
            Normalization::None => 1.0,
            Normalization::Scale255 => 255.0,
            Normalization::Standardize => {
                return Err(Error::InvalidArgument(
                    "standardized datasets cannot be written as IDX".into(),
                ))
            }
        };
        let (rows, cols) = self.image_shape.unwrap_or((1, self.input_dim()));
        let n = self.len();
        let mut images = Vec::with_capacity(16 + n * rows * cols);
        images.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
        for v in [n, rows, cols] {
            images.extend_from_slice(&(v as u32).to_be_bytes());
        }
        for &x in self.inputs.as_slice() {
            let raw = (x * scale).round();
            if !(0.0..=255.0).contains(&raw) {
                return Err(Error::InvalidArgument(format!("pixel value {x} not representable")));
            }
            images.push(raw as u8);
        }
        let mut labels = Vec::with_capacity(8 + n);
        labels.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
        labels.extend_from_slice(&(n as u32).to_be_bytes());
        for &y in &self.labels {
            let b = u8::try_from(y)
                .map_err(|_| Error::InvalidArgument(format!("label {y} exceeds a byte")))?;
            labels.push(b);
        }
        Ok((images, labels))
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Reader<'a> {
    fn u32(&mut self) -> Result<u32> {
        let chunk = self.take(4)?;
        Ok(u32::from_be_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]))
    }

    fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        let end = self.pos + len;
        if end > self.bytes.len() {
            return Err(Error::Truncated {
                what: self.what,
                needed: end,
                found: self.bytes.len(),
            });
        }
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }
}

/// Parses an IDX image stream and its label stream.
pub fn parse_idx(images: &[u8], labels: &[u8], normalization: Normalization) -> Result<Dataset> {
    let mut img = Reader {
        bytes: images,
        pos: 0,
        what: "image stream",
    };
    let magic = img.u32()?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::BadMagic {
            expected: IDX_IMAGES_MAGIC,
            found: magic,
        });
    }
    let count = img.u32()? as usize;
    let rows = img.u32()? as usize;
    let cols = img.u32()? as usize;

    let mut lab = Reader {
        bytes: labels,
        pos: 0,
        what: "label stream",
    };
    let magic = lab.u32()?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::BadMagic {
            expected: IDX_LABELS_MAGIC,
            found: magic,
        });
    }
    let label_count = lab.u32()? as usize;
    if label_count != count {
        return Err(Error::CountMismatch {
            images: count,
            labels: label_count,
        });
    }

    let pixels = img.take(count * rows * cols)?;
    let ys: Vec<usize> = lab.take(count)?.iter().map(|&b| usize::from(b)).collect();

    let d = rows * cols;
    let values: Vec<f64> = match normalization {
        Normalization::Scale255 => pixels.iter().map(|&p| f64::from(p) / 255.0).collect(),
        Normalization::None | Normalization::Standardize => {
            pixels.iter().map(|&p| f64::from(p)).collect()
        }
    };
    let inputs = DenseMatrix::from_row_major(count, d, values)?;
    let num_classes = ys.iter().copied().max().map_or(0, |m| m + 1);
    let mut ds = Dataset {
        inputs,
        labels: ys,
        num_classes,
        normalization: Normalization::None,
        image_shape: Some((rows, cols)),
    };
    ds.validate()?;
    match normalization {
        Normalization::Standardize => standardize(&mut ds),
        other => ds.normalization = other,
    }
    Ok(ds)
}

pub fn load_idx_files(
    images: impl AsRef<Path>,
    labels: impl AsRef<Path>,
    normalization: Normalization,
) -> std::io::Result<Result<Dataset>> {
    let img = std::fs::read(images)?;
    let lab = std::fs::read(labels)?;
    Ok(parse_idx(&img, &lab, normalization))
}

/// Per-feature zero mean and unit variance; constant features are only centered.
pub fn standardize(ds: &mut Dataset) {
    let (n, d) = ds.inputs.shape();
    for j in 0..d {
        let col = ds.inputs.col(j);
        let mean = col.iter().sum::<f64>() / n as f64;
        let var = col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
        for i in 0..n {
            ds.inputs[(i, j)] = (col[i] - mean) / sd;
        }
    }
    ds.normalization = Normalization::Standardize;
}

/// Keeps the rows whose label is in `keep`, relabeling `keep[k]` to `k`.
pub fn subsample_classes(ds: &Dataset, keep: &[usize]) -> Result<Dataset> {
    if keep.is_empty() {
        return Err(Error::InvalidArgument("keep set is empty".into()));
    }
    for (k, &c) in keep.iter().enumerate() {
        if keep[..k].contains(&c) {
            return Err(Error::InvalidArgument(format!("class {c} listed twice")));
        }
    }
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (i, &y) in ds.labels.iter().enumerate() {
        if let Some(k) = keep.iter().position(|&c| c == y) {
            rows.extend_from_slice(ds.input(i));
            labels.push(k);
        }
    }
    if labels.is_empty() {
        return Err(Error::EmptyResult);
    }
    let inputs = DenseMatrix::from_row_major(labels.len(), ds.input_dim(), rows)?;
    Ok(Dataset {
        inputs,
        labels,
        num_classes: keep.len(),
        normalization: ds.normalization,
        image_shape: ds.image_shape,
    })
}

/// Average-pools flattened images by `factor` in both directions.
pub fn downsample(ds: &Dataset, factor: usize) -> Result<Dataset> {
    let (rows, cols) = ds
        .image_shape
        .ok_or_else(|| Error::InvalidArgument("dataset has no image geometry".into()))?;
    if factor == 0 || rows % factor != 0 || cols % factor != 0 {
        return Err(Error::InvalidArgument(format!(
            "pool factor {factor} does not divide {rows}x{cols}"
        )));
    }
    let (r2, c2) = (rows / factor, cols / factor);
    let inv = 1.0 / (factor * factor) as f64;
    let n = ds.len();
    let mut out = DenseMatrix::zeros(n, r2 * c2);
    for s in 0..n {
        let img = ds.input(s);
        for i in 0..r2 {
            for j in 0..c2 {
                let mut acc = 0.0;
                for di in 0..factor {
                    for dj in 0..factor {
                        acc += img[(i * factor + di) * cols + j * factor + dj];
                    }
                }
                out[(s, i * c2 + j)] = acc * inv;
            }
        }
    }
    Ok(Dataset {
        inputs: out,
        labels: ds.labels.clone(),
        num_classes: ds.num_classes,
        normalization: ds.normalization,
        image_shape: Some((r2, c2)),
    })
}

/// Class `c` is drawn from `N(separation·e_{c mod d}, I)`; examples are
/// grouped by class.
pub fn synth_gaussian_classes(
    dim: usize,
    num_classes: usize,
    per_class: usize,
    separation: f64,
    seed: u64,
) -> Result<Dataset> {
    if !(separation >= 0.0) || !separation.is_finite() {
        return Err(Error::InvalidArgument(format!("separation must be >= 0, got {separation}")));
    }
    if dim == 0 || num_classes == 0 || per_class == 0 {
        return Err(Error::InvalidArgument("synthetic dataset dimensions must be positive".into()));
    }
    let mut rng = seed::stream(seed, "synth", 0);
    let n = num_classes * per_class;
    let mut values = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for c in 0..num_classes {
        for _ in 0..per_class {
            for k in 0..dim {
                let z: f64 = StandardNormal.sample(&mut rng);
                let mu = if k == c % dim { separation } else { 0.0 };
                values.push(mu + z);
            }
            labels.push(c);
        }
    }
    let inputs = DenseMatrix::from_row_major(n, dim, values)?;
    Dataset::new(inputs, labels, num_classes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture(count: u32, pixels: &[u8], labels: &[u8]) -> (Vec<u8>, Vec<u8>) {
        let mut img = Vec::new();
        img.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
        img.extend_from_slice(&count.to_be_bytes());
        img.extend_from_slice(&2u32.to_be_bytes());
        img.extend_from_slice(&2u32.to_be_bytes());
        img.extend_from_slice(pixels);
        let mut lab = Vec::new();
        lab.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
        lab.extend_from_slice(&(labels.len() as u32).to_be_bytes());
        lab.extend_from_slice(labels);
        (img, lab)
    }

    #[test]
    fn parses_minimal_fixture() {
        let (img, lab) = fixture(1, &[0, 128, 255, 0], &[7]);
        let ds = parse_idx(&img, &lab, Normalization::Scale255).unwrap();
        assert_eq!(ds.input(0), &[0.0, 128.0 / 255.0, 1.0, 0.0]);
        assert_eq!(ds.labels, vec![7]);
        assert_eq!(ds.num_classes, 8);
        assert_eq!(ds.image_shape, Some((2, 2)));
    }

    #[test]
    fn bad_magic_is_reported() {
        let (mut img, lab) = fixture(1, &[0, 0, 0, 0], &[0]);
        img[3] = 0x02;
        assert_eq!(
            parse_idx(&img, &lab, Normalization::Scale255),
            Err(Error::BadMagic {
                expected: IDX_IMAGES_MAGIC,
                found: 0x0000_0802
            })
        );
        let (img, mut lab) = fixture(1, &[0, 0, 0, 0], &[0]);
        lab[3] = 0x03;
        assert!(matches!(
            parse_idx(&img, &lab, Normalization::Scale255),
            Err(Error::BadMagic { .. })
        ));
    }

    #[test]
    fn count_mismatch_is_reported() {
        let (img, lab) = fixture(1, &[0, 0, 0, 0], &[0, 1]);
        assert_eq!(
            parse_idx(&img, &lab, Normalization::Scale255),
            Err(Error::CountMismatch { images: 1, labels: 2 })
        );
    }

    #[test]
    fn truncation_is_reported() {
        let (img, lab) = fixture(2, &[0, 0, 0, 0, 1], &[0, 1]);
        assert!(matches!(
            parse_idx(&img, &lab, Normalization::Scale255),
            Err(Error::Truncated { what: "image stream", .. })
        ));
        let (img, lab) = fixture(1, &[0, 0, 0, 0], &[0]);
        assert!(matches!(
            parse_idx(&img, &lab[..7], Normalization::Scale255),
            Err(Error::Truncated { what: "label stream", .. })
        ));
        assert!(matches!(
            parse_idx(&img[..2], &lab, Normalization::Scale255),
            Err(Error::Truncated { .. })
        ));
    }

    #[test]
    fn subsample_examples() {
        let (img, lab) = fixture(4, &[0; 16], &[0, 1, 2, 1]);
        let ds = parse_idx(&img, &lab, Normalization::Scale255).unwrap();
        let two = subsample_classes(&ds, &[0, 1]).unwrap();
        assert_eq!(two.labels, vec![0, 1, 1]);
        assert_eq!(two.num_classes, 2);
        let all = subsample_classes(&ds, &[0, 1, 2]).unwrap();
        assert_eq!(all, ds);
        assert_eq!(subsample_classes(&ds, &[9]), Err(Error::EmptyResult));
    }

    #[test]
    fn downsample_averages_blocks() {
        let (img, lab) = fixture(1, &[0, 100, 200, 100], &[0]);
        let ds = parse_idx(&img, &lab, Normalization::None).unwrap();
        let small = downsample(&ds, 2).unwrap();
        assert_eq!(small.input(0), &[100.0]);
        assert_eq!(small.image_shape, Some((1, 1)));
        assert!(downsample(&ds, 3).is_err());
    }

    #[test]
    fn synthetic_is_deterministic() {
        let a = synth_gaussian_classes(4, 3, 5, 2.0, 11).unwrap();
        let b = synth_gaussian_classes(4, 3, 5, 2.0, 11).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 15);
        assert_eq!(a.labels[5], 1);
        let c = synth_gaussian_classes(4, 3, 5, 2.0, 12).unwrap();
        assert_ne!(a.inputs, c.inputs);
        assert!(synth_gaussian_classes(4, 3, 5, -1.0, 1).is_err());
    }

    #[test]
    fn zero_separation_classes_share_distribution() {
        let ds = synth_gaussian_classes(3, 2, 2000, 0.0, 5).unwrap();
        let mean = |c: usize| {
            let rows: Vec<usize> = (0..ds.len()).filter(|&i| ds.labels[i] == c).collect();
            rows.iter().map(|&i| ds.input(i)[0]).sum::<f64>() / rows.len() as f64
        };
        assert!((mean(0) - mean(1)).abs() < 0.15);
    }
}
