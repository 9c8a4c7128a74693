//! Datasets for the desk-scale fitness oracle.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::stream;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid dataset parameters: {0}")]
    InvalidParams(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{location}: {message}")]
    Format { path: PathBuf, location: String, message: String },
    #[error("class {class} has {count} samples, too few for every partition")]
    ClassTooSmall { class: usize, count: usize },
}

fn format_err(path: &Path, location: impl Into<String>, message: impl Into<String>) -> DataError {
    DataError::Format {
        path: path.to_path_buf(),
        location: location.into(),
        message: message.into(),
    }
}

/// Dense features with integer class labels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub name: String,
    features: Vec<f64>,
    dims: usize,
    labels: Vec<usize>,
    class_count: usize,
}

impl Dataset {
    /// `features` is row-major, `labels.len() × dims`.
    pub fn new(
        name: impl Into<String>,
        features: Vec<f64>,
        dims: usize,
        labels: Vec<usize>,
        class_count: usize,
    ) -> Result<Self, DataError> {
        if dims == 0 || features.len() != labels.len() * dims {
            return Err(DataError::InvalidParams(format!(
                "{} features do not form {} rows of {dims}",
                features.len(),
                labels.len()
            )));
        }
        if class_count < 2 {
            return Err(DataError::InvalidParams(format!("class_count {class_count} < 2")));
        }
        if let Some(i) = features.iter().position(|v| !v.is_finite()) {
            return Err(DataError::InvalidParams(format!("non-finite feature in row {}", i / dims)));
        }
        let mut counts = vec![0usize; class_count];
        for (row, &l) in labels.iter().enumerate() {
            if l >= class_count {
                return Err(DataError::InvalidParams(format!(
                    "label {l} in row {row} outside [0, {class_count})"
                )));
            }
            counts[l] += 1;
        }
        if let Some((class, &count)) = counts.iter().enumerate().find(|(_, &c)| c < 2) {
            return Err(DataError::InvalidParams(format!(
                "class {class} has {count} samples, need at least 2"
            )));
        }
        Ok(Self { name: name.into(), features, dims, labels, class_count })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dims..(i + 1) * self.dims]
    }

    /// One-hot label of sample `i`.
    pub fn one_hot(&self, i: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.class_count];
        v[self.labels[i]] = 1.0;
        v
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_count];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }
}

/// Unit-norm cluster directions: random starts spread apart by a fixed
/// number of repulsion steps on the unit sphere.
pub fn blob_centers(class_count: usize, dims: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = stream(seed, &[0xCE17]);
    let mut centers: Vec<Vec<f64>> = (0..class_count).map(|_| random_unit(&mut rng, dims)).collect();
    for _ in 0..REPULSION_STEPS {
        let forces: Vec<Vec<f64>> = centers
            .iter()
            .enumerate()
            .map(|(i, ci)| {
                let mut f = vec![0.0; dims];
                for (j, cj) in centers.iter().enumerate() {
                    let d = distance(ci, cj);
                    if i == j || d < 1e-12 {
                        continue;
                    }
                    for (fk, (a, b)) in f.iter_mut().zip(ci.iter().zip(cj)) {
                        *fk += (a - b) / (d * d * d);
                    }
                }
                let norm = f.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm > 1.0 {
                    f.iter_mut().for_each(|x| *x /= norm);
                }
                f
            })
            .collect();
        for (c, f) in centers.iter_mut().zip(&forces) {
            c.iter_mut().zip(f).for_each(|(x, fx)| *x += 0.05 * fx);
            let norm = c.iter().map(|x| x * x).sum::<f64>().sqrt();
            c.iter_mut().for_each(|x| *x /= norm);
        }
    }
    centers
}

const REPULSION_STEPS: usize = 300;

fn random_unit<R: Rng>(rng: &mut R, dims: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dims).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Isotropic unit-variance Gaussian clusters around [`blob_centers`]
/// scaled by `spread`. Samples are stored class by class.
pub fn synth_blobs(
    class_count: usize,
    samples_per_class: usize,
    dims: usize,
    spread: f64,
    seed: u64,
) -> Result<Dataset, DataError> {
    if class_count < 2 || samples_per_class < 2 || dims == 0 {
        return Err(DataError::InvalidParams(format!(
            "blobs need class_count >= 2, samples_per_class >= 2, dims >= 1 \
             (got {class_count}, {samples_per_class}, {dims})"
        )));
    }
    if !(spread.is_finite() && spread >= 0.0) {
        return Err(DataError::InvalidParams(format!("spread {spread} must be finite and >= 0")));
    }
    let centers = blob_centers(class_count, dims, seed);
    let mut rng = stream(seed, &[0xB10B]);
    let mut features = Vec::with_capacity(class_count * samples_per_class * dims);
    let mut labels = Vec::with_capacity(class_count * samples_per_class);
    for (class, center) in centers.iter().enumerate() {
        for _ in 0..samples_per_class {
            for &c in center {
                let noise: f64 = rng.sample(StandardNormal);
                features.push(c * spread + noise);
            }
            labels.push(class);
        }
    }
    Dataset::new(
        format!("blobs-{class_count}x{samples_per_class}-d{dims}"),
        features,
        dims,
        labels,
        class_count,
    )
}

/// Layout of a delimited text file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DelimitedSchema {
    pub delimiter: char,
    pub has_header: bool,
    /// Zero-based column holding the integer label; `-1` means last.
    pub label_column: i64,
    /// Min-max scale each feature column to `[0, 1]`.
    pub normalize: bool,
    /// Inferred as `max label + 1` when absent.
    pub class_count: Option<usize>,
    pub take: Option<usize>,
}

impl Default for DelimitedSchema {
    fn default() -> Self {
        Self {
            delimiter: ',',
            has_header: false,
            label_column: -1,
            normalize: false,
            class_count: None,
            take: None,
        }
    }
}

pub fn load_delimited(path: &Path, schema: &DelimitedSchema) -> Result<Dataset, DataError> {
    if !schema.delimiter.is_ascii() {
        return Err(DataError::InvalidParams("delimiter must be a single ASCII character".into()));
    }
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(schema.delimiter as u8)
        .has_headers(schema.has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(source) => DataError::Io { path: path.to_path_buf(), source },
            other => format_err(path, "0", format!("{other:?}")),
        })?;
    let mut width: Option<usize> = None;
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for record in reader.records() {
        if schema.take.is_some_and(|k| labels.len() >= k) {
            break;
        }
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            format_err(path, format!("line {line}"), e.to_string())
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let loc = format!("line {line}");
        if record.iter().all(|f| f.is_empty()) {
            continue;
        }
        match width {
            None if record.len() < 2 => {
                return Err(format_err(path, loc, "need at least one feature and a label"))
            }
            None => width = Some(record.len()),
            Some(w) if w != record.len() => {
                return Err(format_err(
                    path,
                    loc,
                    format!("ragged row: {} fields, expected {w}", record.len()),
                ))
            }
            _ => {}
        }
        let w = record.len();
        let label_col = if schema.label_column < 0 {
            w as i64 + schema.label_column
        } else {
            schema.label_column
        };
        if label_col < 0 || label_col as usize >= w {
            return Err(format_err(path, loc, format!("label column {} out of range", schema.label_column)));
        }
        let label_col = label_col as usize;
        for (i, field) in record.iter().enumerate() {
            if i == label_col {
                let label: usize = field
                    .parse()
                    .map_err(|_| format_err(path, &loc, format!("label '{field}' is not a class index")))?;
                if schema.class_count.is_some_and(|n| label >= n) {
                    return Err(format_err(path, &loc, format!("label {label} out of range")));
                }
                labels.push(label);
            } else {
                let v: f64 = field
                    .parse()
                    .map_err(|_| format_err(path, &loc, format!("feature '{field}' is not a number")))?;
                if !v.is_finite() {
                    return Err(format_err(path, &loc, format!("non-finite feature '{field}'")));
                }
                features.push(v);
            }
        }
    }
    let Some(w) = width else {
        return Err(format_err(path, "line 1", "no data rows"));
    };
    let dims = w - 1;
    if schema.normalize {
        min_max_scale(&mut features, dims);
    }
    let class_count = schema
        .class_count
        .unwrap_or_else(|| labels.iter().copied().max().unwrap_or(0) + 1);
    let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    Dataset::new(name, features, dims, labels, class_count)
}

fn min_max_scale(features: &mut [f64], dims: usize) {
    for col in 0..dims {
        let column = features.iter().skip(col).step_by(dims);
        let (lo, hi) = column.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
        let range = hi - lo;
        for v in features.iter_mut().skip(col).step_by(dims) {
            *v = if range > 0.0 { (*v - lo) / range } else { 0.0 };
        }
    }
}

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn read_file(path: &Path) -> Result<Vec<u8>, DataError> {
    std::fs::read(path).map_err(|source| DataError::Io { path: path.to_path_buf(), source })
}

fn be_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32, DataError> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| format_err(path, format!("byte {offset}"), "truncated header"))
}

/// IDX (MNIST-family) images and labels; pixels are scaled by 1/255.
pub fn load_idx(images: &Path, labels: &Path, take: Option<usize>) -> Result<Dataset, DataError> {
    let img = read_file(images)?;
    let lab = read_file(labels)?;

    let magic = be_u32(&img, 0, images)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(format_err(
            images,
            "byte 0",
            format!("bad magic 0x{magic:08x}, expected 0x{IDX_IMAGES_MAGIC:08x}"),
        ));
    }
    let magic = be_u32(&lab, 0, labels)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(format_err(
            labels,
            "byte 0",
            format!("bad magic 0x{magic:08x}, expected 0x{IDX_LABELS_MAGIC:08x}"),
        ));
    }
    let n_img = be_u32(&img, 4, images)? as usize;
    let rows = be_u32(&img, 8, images)? as usize;
    let cols = be_u32(&img, 12, images)? as usize;
    let n_lab = be_u32(&lab, 4, labels)? as usize;
    if n_img != n_lab {
        return Err(format_err(
            labels,
            "byte 4",
            format!("{n_lab} labels for {n_img} images"),
        ));
    }
    let dims = rows * cols;
    let n = take.map_or(n_img, |k| k.min(n_img));
    let pixel_end = 16 + n * dims;
    if img.len() < pixel_end {
        return Err(format_err(
            images,
            format!("byte {}", img.len()),
            format!("truncated pixel data, expected {pixel_end} bytes"),
        ));
    }
    if lab.len() < 8 + n {
        return Err(format_err(labels, format!("byte {}", lab.len()), "truncated label data"));
    }
    let features: Vec<f64> = img[16..pixel_end].iter().map(|&b| f64::from(b) / 255.0).collect();
    let labels_vec: Vec<usize> = lab[8..8 + n].iter().map(|&b| b as usize).collect();
    let class_count = labels_vec.iter().copied().max().unwrap_or(0) + 1;
    let name = images.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    Dataset::new(name, features, dims, labels_vec, class_count)
}

/// Disjoint, exhaustive train/validation/test index sets.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
}

pub const DEFAULT_FRACTIONS: (f64, f64, f64) = (0.7, 0.15, 0.15);

/// Stratified split: each class is shuffled and cut by rounded fractions.
pub fn split(
    dataset: &Dataset,
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<DatasetSplit, DataError> {
    let (ft, fv, fs) = fractions;
    if !(ft > 0.0 && fv > 0.0 && fs > 0.0) || ((ft + fv + fs) - 1.0).abs() > 1e-9 {
        return Err(DataError::InvalidParams(format!(
            "fractions ({ft}, {fv}, {fs}) must be positive and sum to 1"
        )));
    }
    let mut rng = stream(seed, &[0x5911]);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); dataset.class_count()];
    for (i, &l) in dataset.labels().iter().enumerate() {
        by_class[l].push(i);
    }
    let mut out = DatasetSplit { train: vec![], val: vec![], test: vec![], seed };
    for (class, mut idx) in by_class.into_iter().enumerate() {
        let n = idx.len();
        let n_val = (n as f64 * fv).round() as usize;
        let n_test = (n as f64 * fs).round() as usize;
        if n_val == 0 || n_test == 0 || n_val + n_test >= n {
            return Err(DataError::ClassTooSmall { class, count: n });
        }
        idx.shuffle(&mut rng);
        out.val.extend_from_slice(&idx[..n_val]);
        out.test.extend_from_slice(&idx[n_val..n_val + n_test]);
        out.train.extend_from_slice(&idx[n_val + n_test..]);
    }
    out.train.sort_unstable();
    out.val.sort_unstable();
    out.test.sort_unstable();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn minimum_blobs() {
        let d = synth_blobs(2, 2, 1, 0.0, 0).unwrap();
        assert_eq!(d.len(), 4);
        let centers = blob_centers(2, 1, 0);
        assert_ne!(centers[0], centers[1]);
    }

    #[test]
    fn centers_spread_evenly() {
        let c = blob_centers(3, 2, 42);
        for i in 0..3 {
            assert!((c[i].iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-12);
            for j in i + 1..3 {
                assert!((distance(&c[i], &c[j]) - 3f64.sqrt()).abs() < 1e-2, "{c:?}");
            }
        }
    }

    #[test]
    fn blobs_are_deterministic() {
        let a = synth_blobs(3, 50, 4, 2.0, 9).unwrap();
        let b = synth_blobs(3, 50, 4, 2.0, 9).unwrap();
        let c = synth_blobs(3, 50, 4, 2.0, 10).unwrap();
        assert_eq!(a.features(), b.features());
        assert_ne!(a.features(), c.features());
    }

    #[test]
    fn blobs_reject_bad_sizes() {
        assert!(synth_blobs(1, 10, 2, 1.0, 0).is_err());
        assert!(synth_blobs(2, 1, 2, 1.0, 0).is_err());
        assert!(synth_blobs(2, 2, 0, 1.0, 0).is_err());
    }

    #[test]
    fn default_split_sizes_and_stratification() {
        let d = synth_blobs(3, 200, 2, 3.0, 42).unwrap();
        let s = split(&d, DEFAULT_FRACTIONS, 1).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (420, 90, 90));
        for part in [&s.val, &s.test] {
            let mut counts = [0; 3];
            for &i in part.iter() {
                counts[d.labels()[i]] += 1;
            }
            assert_eq!(counts, [30, 30, 30]);
        }
        assert_eq!(s, split(&d, DEFAULT_FRACTIONS, 1).unwrap());
        assert_ne!(s, split(&d, DEFAULT_FRACTIONS, 2).unwrap());
    }

    #[test]
    fn split_rejects_tiny_classes_and_bad_fractions() {
        let d = synth_blobs(2, 2, 1, 1.0, 0).unwrap();
        assert!(matches!(split(&d, DEFAULT_FRACTIONS, 0), Err(DataError::ClassTooSmall { .. })));
        let d = synth_blobs(2, 20, 1, 1.0, 0).unwrap();
        assert!(split(&d, (0.5, 0.5, 0.1), 0).is_err());
        assert!(split(&d, (1.0, 0.0, 0.0), 0).is_err());
    }

    #[test]
    fn dataset_rejects_invalid_contents() {
        assert!(Dataset::new("x", vec![0.0, f64::NAN, 1.0, 2.0], 1, vec![0, 0, 1, 1], 2).is_err());
        assert!(Dataset::new("x", vec![0.0; 4], 1, vec![0, 0, 1, 2], 2).is_err());
        assert!(Dataset::new("x", vec![0.0; 4], 1, vec![0, 0, 0, 1], 2).is_err());
        assert!(Dataset::new("x", vec![0.0; 4], 2, vec![0, 0, 1, 1], 2).is_err());
    }

    fn write_temp(contents: &[u8]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents).unwrap();
        f
    }

    #[test]
    fn loads_small_csv() {
        let f = write_temp(b"0.5,1.0,0\n0.25,2.0,1\n0.75,3.0,0\n1.0,4.0,1\n");
        let d = load_delimited(f.path(), &DelimitedSchema::default()).unwrap();
        assert_eq!((d.len(), d.dims(), d.class_count()), (4, 2, 2));
        assert_eq!(d.row(1), &[0.25, 2.0]);
        assert_eq!(d.labels(), &[0, 1, 0, 1]);
    }

    #[test]
    fn csv_header_label_first_and_normalization() {
        let f = write_temp(b"label;a;b\n1;0;10\n0;5;20\n1;10;30\n0;5;40\n");
        let schema = DelimitedSchema {
            delimiter: ';',
            has_header: true,
            label_column: 0,
            normalize: true,
            ..Default::default()
        };
        let d = load_delimited(f.path(), &schema).unwrap();
        assert_eq!(d.row(0), &[0.0, 0.0]);
        assert_eq!(d.row(2), &[1.0, 2.0 / 3.0]);
        let taken = load_delimited(f.path(), &DelimitedSchema { take: Some(4), ..schema }).unwrap();
        assert_eq!(taken.len(), 4);
    }

    #[test]
    fn csv_errors_name_the_line() {
        let f = write_temp(b"1,2,0\n3,0\n");
        let err = load_delimited(f.path(), &DelimitedSchema::default()).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
        assert!(err.to_string().contains("ragged"), "{err}");

        let f = write_temp(b"1,2,0\n3,4,1\n5,6,7\n");
        let schema = DelimitedSchema { class_count: Some(2), ..Default::default() };
        let err = load_delimited(f.path(), &schema).unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");

        let f = write_temp(b"1,2,0\n3,nan,1\n");
        let err = load_delimited(f.path(), &DelimitedSchema::default()).unwrap_err();
        assert!(err.to_string().contains("non-finite"), "{err}");
    }

    fn idx_images(magic: u32, pixels: &[u8], n: u32, rows: u32, cols: u32) -> Vec<u8> {
        let mut out = Vec::new();
        for v in [magic, n, rows, cols] {
            out.extend_from_slice(&v.to_be_bytes());
        }
        out.extend_from_slice(pixels);
        out
    }

    fn idx_labels(labels: &[u8]) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
        out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
        out.extend_from_slice(labels);
        out
    }

    #[test]
    fn idx_pixels_scaled_to_unit_interval() {
        let pixels = [0u8, 255, 128, 64, 10, 20, 30, 40];
        let img = write_temp(&idx_images(IDX_IMAGES_MAGIC, &pixels, 4, 1, 2));
        let lab = write_temp(&idx_labels(&[0, 1, 0, 1]));
        let d = load_idx(img.path(), lab.path(), None).unwrap();
        assert_eq!((d.len(), d.dims()), (4, 2));
        assert!(d.features().iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(d.row(0), &[0.0, 1.0]);
    }

    #[test]
    fn idx_wrong_magic_is_named() {
        let img = write_temp(&idx_images(0x0000_0804, &[0; 8], 4, 1, 2));
        let lab = write_temp(&idx_labels(&[0, 1, 0, 1]));
        let err = load_idx(img.path(), lab.path(), None).unwrap_err();
        assert!(err.to_string().contains("0x00000804"), "{err}");
    }

    #[test]
    fn idx_truncation_and_take() {
        let img = write_temp(&idx_images(IDX_IMAGES_MAGIC, &[0; 5], 4, 1, 2));
        let lab = write_temp(&idx_labels(&[0, 1, 0, 1]));
        assert!(load_idx(img.path(), lab.path(), None).is_err());
        let d = load_idx(img.path(), lab.path(), Some(2));
        // two samples cannot hold two per class
        assert!(d.is_err());
    }
}
