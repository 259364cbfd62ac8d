//! Dataset ingestion, normalization, vertical partitioning and sampling of
//! the adversary's tiny dataset.

mod partition;

pub use partition::{
    mnist_column_split, mnist_column_widths, partition_vertical, ratio_split, reassemble,
    PartitionSpec,
};

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::variance::Gmm;

/// Floor recorded for features whose standard deviation is zero.
pub const STD_FLOOR: f64 = 1e-12;

/// Per-feature z-score statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    /// Population mean and standard deviation of each column.
    pub fn fit(x: &Matrix) -> Result<Self> {
        if x.rows() < 2 {
            return Err(Error::invalid("normalization needs at least two rows"));
        }
        let n = x.rows() as f64;
        let mean: Vec<f64> = x.col_sums().into_iter().map(|s| s / n).collect();
        let mut var = vec![0.0; x.cols()];
        for row in x.iter_rows() {
            for ((v, &xi), &m) in var.iter_mut().zip(row).zip(&mean) {
                *v += (xi - m) * (xi - m);
            }
        }
        let std = var
            .into_iter()
            .map(|v| {
                let s = (v / n).sqrt();
                if s > STD_FLOOR {
                    s
                } else {
                    STD_FLOOR
                }
            })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn apply(&self, x: &Matrix) -> Result<Matrix> {
        self.check(x)?;
        let mut out = x.clone();
        let cols = x.cols();
        for (i, v) in out.as_mut_slice().iter_mut().enumerate() {
            let c = i % cols;
            *v = if self.std[c] <= STD_FLOOR {
                0.0
            } else {
                (*v - self.mean[c]) / self.std[c]
            };
        }
        Ok(out)
    }

    pub fn invert(&self, x: &Matrix) -> Result<Matrix> {
        self.check(x)?;
        let mut out = x.clone();
        let cols = x.cols();
        for (i, v) in out.as_mut_slice().iter_mut().enumerate() {
            let c = i % cols;
            *v = *v * self.std[c] + self.mean[c];
        }
        Ok(out)
    }

    fn check(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.mean.len() {
            return Err(Error::shape(
                "normalization statistics do not match feature count",
            ));
        }
        Ok(())
    }
}

/// Labelled feature matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub feature_names: Vec<String>,
    pub class_names: Vec<String>,
    pub norm_stats: Option<NormStats>,
    /// (height, width) for image data with row-major pixels.
    pub image_shape: Option<(usize, usize)>,
}

impl Dataset {
    pub fn new(features: Matrix, labels: Vec<usize>, class_count: usize) -> Result<Self> {
        if labels.len() != features.rows() {
            return Err(Error::shape(format!(
                "{} labels for {} rows",
                labels.len(),
                features.rows()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::invalid(format!(
                "label {bad} outside [0, {class_count})"
            )));
        }
        Ok(Self {
            feature_names: (0..features.cols()).map(|i| format!("x{i}")).collect(),
            class_names: (0..class_count).map(|c| c.to_string()).collect(),
            features,
            labels,
            norm_stats: None,
            image_shape: None,
        })
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn class_count(&self) -> usize {
        self.class_names.len()
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            ..self.clone_meta()
        }
    }

    fn clone_meta(&self) -> Dataset {
        Dataset {
            features: Matrix::zeros(0, self.dim()),
            labels: Vec::new(),
            feature_names: self.feature_names.clone(),
            class_names: self.class_names.clone(),
            norm_stats: self.norm_stats.clone(),
            image_shape: self.image_shape,
        }
    }

    /// Per-class row counts.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_count()];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }
}

/// Z-scores every feature and records the statistics for the inverse map.
pub fn normalize(ds: &Dataset) -> Result<Dataset> {
    let stats = NormStats::fit(&ds.features)?;
    Ok(Dataset {
        features: stats.apply(&ds.features)?,
        norm_stats: Some(stats),
        ..ds.clone()
    })
}

pub fn inverse_normalize(ds: &Dataset) -> Result<Dataset> {
    let stats = ds
        .norm_stats
        .as_ref()
        .ok_or_else(|| Error::invalid("dataset carries no normalization statistics"))?;
    Ok(Dataset {
        features: stats.invert(&ds.features)?,
        norm_stats: None,
        ..ds.clone()
    })
}

/// Reads a headed CSV of numeric features plus one label column.
///
/// Labels may be numbers or strings. Distinct values are sorted (numerically
/// when every label parses as a number) and mapped to 0..C.
pub fn load_csv(path: impl AsRef<Path>, label_column: &str) -> Result<Dataset> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::data(path, e.to_string()))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::data(path, e.to_string()))?
        .clone();
    let label_idx = headers
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| Error::data(path, format!("no label column '{label_column}'")))?;
    let feature_names: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != label_idx)
        .map(|(_, h)| h.to_string())
        .collect();

    let mut data = Vec::new();
    let mut raw_labels = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::data(path, e.to_string()))?;
        if record.len() != headers.len() {
            return Err(Error::data(
                path,
                format!("row {} has {} cells", line + 2, record.len()),
            ));
        }
        for (i, cell) in record.iter().enumerate() {
            if i == label_idx {
                raw_labels.push(cell.to_string());
                continue;
            }
            let v: f64 = cell.parse().map_err(|_| {
                Error::data(
                    path,
                    format!(
                        "non-numeric cell '{cell}' in column '{}' at row {}",
                        &headers[i],
                        line + 2
                    ),
                )
            })?;
            if !v.is_finite() {
                return Err(Error::data(
                    path,
                    format!("non-finite cell at row {}", line + 2),
                ));
            }
            data.push(v);
        }
    }
    if raw_labels.is_empty() {
        return Err(Error::data(path, "no data rows"));
    }

    let numeric: Option<Vec<f64>> = raw_labels.iter().map(|l| l.parse().ok()).collect();
    let mut classes: Vec<String> = raw_labels.clone();
    match &numeric {
        Some(_) => classes.sort_by(|a, b| {
            a.parse::<f64>()
                .unwrap()
                .total_cmp(&b.parse::<f64>().unwrap())
        }),
        None => classes.sort(),
    }
    classes.dedup();
    let index: BTreeMap<&str, usize> = classes
        .iter()
        .enumerate()
        .map(|(i, c)| (c.as_str(), i))
        .collect();
    let labels = raw_labels.iter().map(|l| index[l.as_str()]).collect();

    let n = raw_labels.len();
    let features = Matrix::new(n, feature_names.len(), data)?;
    Ok(Dataset {
        features,
        labels,
        feature_names,
        class_names: classes,
        norm_stats: None,
        image_shape: None,
    })
}

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn be_u32(bytes: &[u8], at: usize) -> Option<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
}

/// Reads an IDX image/label pair; pixels are scaled to [0, 1].
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let (ip, lp) = (images_path.as_ref(), labels_path.as_ref());
    let images = fs::read(ip).map_err(|e| Error::data(ip, e.to_string()))?;
    let labels = fs::read(lp).map_err(|e| Error::data(lp, e.to_string()))?;

    let magic = be_u32(&images, 0).ok_or_else(|| Error::data(ip, "truncated header"))?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::data(ip, format!("bad magic 0x{magic:08x}")));
    }
    let dims: Vec<usize> = (0..3)
        .map(|i| be_u32(&images, 4 + 4 * i).map(|v| v as usize))
        .collect::<Option<_>>()
        .ok_or_else(|| Error::data(ip, "truncated header"))?;
    let (n, h, w) = (dims[0], dims[1], dims[2]);
    let pixels = &images[16..];
    if pixels.len() != n * h * w {
        return Err(Error::data(
            ip,
            format!("expected {} pixel bytes, found {}", n * h * w, pixels.len()),
        ));
    }

    let magic = be_u32(&labels, 0).ok_or_else(|| Error::data(lp, "truncated header"))?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::data(lp, format!("bad magic 0x{magic:08x}")));
    }
    let count = be_u32(&labels, 4).ok_or_else(|| Error::data(lp, "truncated header"))? as usize;
    let label_bytes = &labels[8..];
    if label_bytes.len() != count {
        return Err(Error::data(
            lp,
            format!("expected {count} labels, found {}", label_bytes.len()),
        ));
    }
    if count != n {
        return Err(Error::data(lp, format!("{count} labels for {n} images")));
    }

    let classes = label_bytes
        .iter()
        .copied()
        .max()
        .map_or(0, |m| m as usize + 1);
    let features = Matrix::new(n, h * w, pixels.iter().map(|&b| b as f64 / 255.0).collect())?;
    let mut ds = Dataset::new(
        features,
        label_bytes.iter().map(|&b| b as usize).collect(),
        classes,
    )?;
    ds.feature_names = (0..h * w)
        .map(|i| format!("px{}_{}", i / w, i % w))
        .collect();
    ds.image_shape = Some((h, w));
    Ok(ds)
}

/// Train/test split stratified by label. Each class contributes
/// round(test_fraction · count) rows to the test side; both sides keep the
/// original row order.
pub fn stratified_split(ds: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(Error::invalid("test fraction must be in [0, 1)"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); ds.class_count()];
    for (i, &l) in ds.labels.iter().enumerate() {
        by_class[l].push(i);
    }
    let mut is_test = vec![false; ds.len()];
    for rows in &mut by_class {
        rows.shuffle(&mut rng);
        let k = (rows.len() as f64 * test_fraction).round() as usize;
        for &i in &rows[..k] {
            is_test[i] = true;
        }
    }
    let (test, train): (Vec<usize>, Vec<usize>) = (0..ds.len()).partition(|&i| is_test[i]);
    Ok((ds.subset(&train), ds.subset(&test)))
}

/// Rows of a benign participant's test view known to the adversary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TinyDataset {
    pub rows: Matrix,
    pub source_indices: Vec<usize>,
}

impl TinyDataset {
    pub fn len(&self) -> usize {
        self.rows.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Draws `h` distinct rows of `view` in random order.
pub fn sample_tiny(view: &Matrix, h: usize, seed: u64) -> Result<TinyDataset> {
    if h == 0 || h > view.rows() {
        return Err(Error::invalid(format!(
            "tiny dataset size {h} must be in [1, {}]",
            view.rows()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let source_indices = rand::seq::index::sample(&mut rng, view.rows(), h).into_vec();
    Ok(TinyDataset {
        rows: view.select_rows(&source_indices),
        source_indices,
    })
}

/// Samples a labelled dataset from a mixture; labels are component indices.
pub fn synth_gmm_dataset(gmm: &Gmm, n: usize, seed: u64) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (x, labels) = gmm.sample(n, &mut rng);
    Dataset::new(x, labels, gmm.components())
}

/// Feature layout of the synthetic stand-in for the two-modality dataset.
pub const MULTIMODAL_IMAGE_DIM: usize = 634;
pub const MULTIMODAL_TEXT_DIM: usize = 1000;
pub const MULTIMODAL_CLASSES: usize = 10;

/// Synthetic two-modality dataset: 634 dense image-like features followed by
/// 1000 sparse binary tag features, 10 classes. Both blocks carry class signal.
pub fn synth_multimodal(n: usize, seed: u64) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Normal::new(0.0, 1.0).expect("valid normal");
    let centers: Vec<Vec<f64>> = (0..MULTIMODAL_CLASSES)
        .map(|_| {
            (0..MULTIMODAL_IMAGE_DIM)
                .map(|_| 0.5 * unit.sample(&mut rng))
                .collect()
        })
        .collect();
    let tag_rates: Vec<Vec<f64>> = (0..MULTIMODAL_CLASSES)
        .map(|_| {
            (0..MULTIMODAL_TEXT_DIM)
                .map(|_| if rng.random_bool(0.03) { 0.4 } else { 0.01 })
                .collect()
        })
        .collect();
    let d = MULTIMODAL_IMAGE_DIM + MULTIMODAL_TEXT_DIM;
    let mut data = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let c = rng.random_range(0..MULTIMODAL_CLASSES);
        labels.push(c);
        data.extend(centers[c].iter().map(|m| m + unit.sample(&mut rng)));
        data.extend(
            tag_rates[c]
                .iter()
                .map(|&p| if rng.random_bool(p) { 1.0 } else { 0.0 }),
        );
    }
    let mut ds = Dataset::new(Matrix::new(n, d, data)?, labels, MULTIMODAL_CLASSES)?;
    ds.feature_names = (0..MULTIMODAL_IMAGE_DIM)
        .map(|i| format!("img{i}"))
        .chain((0..MULTIMODAL_TEXT_DIM).map(|i| format!("tag{i}")))
        .collect();
    Ok(ds)
}
