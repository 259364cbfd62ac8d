use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Ordered feature-column lists, one per participant. Participant 0 is the
/// adversary A.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionSpec {
    parts: Vec<Vec<usize>>,
}

impl PartitionSpec {
    /// Validates that the lists are nonempty, disjoint and cover `0..d`.
    pub fn new(parts: Vec<Vec<usize>>, d: usize) -> Result<Self> {
        if parts.is_empty() {
            return Err(Error::Partition("no participants".into()));
        }
        let mut seen = vec![false; d];
        for (p, cols) in parts.iter().enumerate() {
            if cols.is_empty() {
                return Err(Error::Partition(format!("participant {p} has no columns")));
            }
            for &c in cols {
                if c >= d {
                    return Err(Error::Partition(format!(
                        "column {c} out of range for {d} features"
                    )));
                }
                if std::mem::replace(&mut seen[c], true) {
                    return Err(Error::Partition(format!("column {c} assigned twice")));
                }
            }
        }
        if let Some(c) = seen.iter().position(|s| !s) {
            return Err(Error::Partition(format!("column {c} is not assigned")));
        }
        Ok(Self { parts })
    }

    /// Consecutive column blocks of the given widths, left to right.
    pub fn contiguous(widths: &[usize]) -> Result<Self> {
        let d = widths.iter().sum();
        let mut start = 0;
        let parts = widths
            .iter()
            .map(|&w| {
                let cols = (start..start + w).collect();
                start += w;
                cols
            })
            .collect();
        Self::new(parts, d)
    }

    /// Splits an image of `height × width` row-major pixels by blocks of
    /// image columns with the given widths.
    pub fn image_columns(col_widths: &[usize], height: usize, width: usize) -> Result<Self> {
        if col_widths.iter().sum::<usize>() != width {
            return Err(Error::Partition(format!(
                "column widths {col_widths:?} do not sum to image width {width}"
            )));
        }
        let mut start = 0;
        let parts = col_widths
            .iter()
            .map(|&w| {
                let mut cols = Vec::with_capacity(w * height);
                for r in 0..height {
                    cols.extend((start..start + w).map(|c| r * width + c));
                }
                start += w;
                cols
            })
            .collect();
        Self::new(parts, height * width)
    }

    pub fn participants(&self) -> usize {
        self.parts.len()
    }

    pub fn columns(&self, participant: usize) -> &[usize] {
        &self.parts[participant]
    }

    pub fn widths(&self) -> Vec<usize> {
        self.parts.iter().map(Vec::len).collect()
    }

    pub fn feature_count(&self) -> usize {
        self.parts.iter().map(Vec::len).sum()
    }
}

/// Per-participant column views of `x`.
pub fn partition_vertical(x: &Matrix, spec: &PartitionSpec) -> Result<Vec<Matrix>> {
    if x.cols() != spec.feature_count() {
        return Err(Error::Partition(format!(
            "spec covers {} features, data has {}",
            spec.feature_count(),
            x.cols()
        )));
    }
    Ok(spec.parts.iter().map(|cols| x.select_cols(cols)).collect())
}

/// Inverse of [`partition_vertical`]: places each view's columns back at
/// their original positions.
pub fn reassemble(views: &[Matrix], spec: &PartitionSpec) -> Result<Matrix> {
    if views.len() != spec.participants() {
        return Err(Error::Partition(
            "view count differs from participant count".into(),
        ));
    }
    let rows = views[0].rows();
    let d = spec.feature_count();
    let mut out = Matrix::zeros(rows, d);
    for (view, cols) in views.iter().zip(&spec.parts) {
        if view.rows() != rows || view.cols() != cols.len() {
            return Err(Error::shape("view shape does not match partition"));
        }
        for r in 0..rows {
            let src = view.row(r);
            let dst = out.row_mut(r);
            for (&c, &v) in cols.iter().zip(src) {
                dst[c] = v;
            }
        }
    }
    Ok(out)
}

/// Image-column widths used for 2, 3 and 5 participants on 28-pixel-wide
/// digits. A (participant 0) takes the leftmost block.
pub fn mnist_column_widths(participants: usize) -> Result<&'static [usize]> {
    match participants {
        2 => Ok(&[14, 14]),
        3 => Ok(&[11, 6, 11]),
        5 => Ok(&[8, 4, 4, 4, 8]),
        m => Err(Error::Partition(format!(
            "unsupported participant count {m}; use 2, 3 or 5"
        ))),
    }
}

pub fn mnist_column_split(ds: &Dataset, participants: usize) -> Result<PartitionSpec> {
    let Some((h, w)) = ds.image_shape else {
        return Err(Error::Partition("dataset is not image data".into()));
    };
    if w != 28 {
        return Err(Error::Partition(format!(
            "expected 28-pixel-wide images, got {w}"
        )));
    }
    PartitionSpec::image_columns(mnist_column_widths(participants)?, h, w)
}

/// Two contiguous blocks where A holds round(d·x/(1+x)) of the `d` units.
pub fn ratio_split(d: usize, ratio: f64) -> Result<PartitionSpec> {
    let a = ratio_widths(d, ratio)?;
    PartitionSpec::contiguous(&[a, d - a])
}

pub(crate) fn ratio_widths(d: usize, ratio: f64) -> Result<usize> {
    if !(ratio.is_finite() && ratio > 0.0) {
        return Err(Error::Partition(format!("ratio {ratio} must be positive")));
    }
    let a = (d as f64 * ratio / (1.0 + ratio)).round() as usize;
    if a == 0 || a >= d {
        return Err(Error::Partition(format!(
            "ratio {ratio} leaves a participant without columns"
        )));
    }
    Ok(a)
}

impl Dataset {
    /// Ratio split over image columns for image data, over features otherwise.
    pub fn ratio_partition(&self, ratio: f64) -> Result<PartitionSpec> {
        match self.image_shape {
            Some((h, w)) => {
                let a = ratio_widths(w, ratio)?;
                PartitionSpec::image_columns(&[a, w - a], h, w)
            }
            None => ratio_split(self.dim(), ratio),
        }
    }
}
