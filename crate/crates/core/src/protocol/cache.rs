//! Precomputed benign-side contributions for evaluating one participant's
//! input against many rows of the other participants.
//!
//! Every pairing of an attacker row with a benign row shares the benign
//! local outputs. For HeteroLR those sum directly into the logits; for
//! SplitNN they are folded through the top model's first linear layer, so
//! each pairing costs only the remaining top layers.

use crate::error::{Error, Result};
use crate::matrix::{axpy, Matrix};
use crate::model::Layer;
use crate::protocol::{class_of, Coordinator, VFLSystem};

#[derive(Debug, Clone)]
pub struct BenignCache {
    attacker: usize,
    /// Benign partial sums: logits (HeteroLR) or first-layer pre-activations
    /// including the bias (SplitNN), one row per benign sample.
    partial: Matrix,
    /// Columns of the top model's first layer that read the attacker's output.
    attacker_weights: Option<Matrix>,
}

impl BenignCache {
    pub fn rows(&self) -> usize {
        self.partial.rows()
    }

    pub fn attacker(&self) -> usize {
        self.attacker
    }
}

impl VFLSystem {
    /// Builds the cache from aligned views of every participant except
    /// `attacker`, in participant order.
    pub fn benign_cache(&self, attacker: usize, benign_views: &[&Matrix]) -> Result<BenignCache> {
        let m = self.participants.len();
        if attacker >= m || benign_views.len() + 1 != m {
            return Err(Error::shape(
                "benign views must cover every non-attacker participant",
            ));
        }
        let n = benign_views.first().map_or(0, |v| v.rows());
        if n == 0 {
            return Err(Error::invalid("benign view is empty"));
        }
        let mut locals = Vec::with_capacity(m - 1);
        let mut views = benign_views.iter();
        for (i, p) in self.participants.iter().enumerate() {
            if i == attacker {
                continue;
            }
            let v = views.next().expect("count checked");
            if v.rows() != n {
                return Err(Error::shape("benign views have different row counts"));
            }
            locals.push((i, p.local_output(v)?));
        }
        match &self.coordinator {
            Coordinator::Aggregate(_) => {
                let mut partial = Matrix::zeros(n, self.participants[attacker].model.output_dim());
                for (_, l) in &locals {
                    partial.add_assign(l)?;
                }
                Ok(BenignCache {
                    attacker,
                    partial,
                    attacker_weights: None,
                })
            }
            Coordinator::Top(top) => {
                let Layer::Linear { weights, bias } = &top.layers()[0] else {
                    return Err(Error::invalid("top model must start with a linear layer"));
                };
                let widths: Vec<usize> = self
                    .participants
                    .iter()
                    .map(|p| p.model.output_dim())
                    .collect();
                let offsets: Vec<usize> = widths
                    .iter()
                    .scan(0, |acc, w| {
                        let o = *acc;
                        *acc += w;
                        Some(o)
                    })
                    .collect();
                let block = |p: usize| -> Matrix {
                    let cols: Vec<usize> = (offsets[p]..offsets[p] + widths[p]).collect();
                    weights.select_cols(&cols)
                };
                let mut partial = Matrix::broadcast_row(bias, n);
                for (i, l) in &locals {
                    partial.add_assign(&l.matmul_t(&block(*i))?)?;
                }
                Ok(BenignCache {
                    attacker,
                    partial,
                    attacker_weights: Some(block(attacker)),
                })
            }
        }
    }

    /// Logits of the attacker's local output `a_local` paired with every
    /// cached benign row.
    pub fn logits_against(&self, cache: &BenignCache, a_local: &[f64]) -> Result<Matrix> {
        let mut h = cache.partial.clone();
        match (&self.coordinator, &cache.attacker_weights) {
            (Coordinator::Aggregate(_), _) => {
                if a_local.len() != h.cols() {
                    return Err(Error::shape("attacker output width mismatch"));
                }
                let cols = h.cols();
                for r in 0..h.rows() {
                    axpy(
                        1.0,
                        a_local,
                        &mut h.as_mut_slice()[r * cols..(r + 1) * cols],
                    );
                }
                Ok(h)
            }
            (Coordinator::Top(top), Some(wa)) => {
                if a_local.len() != wa.cols() {
                    return Err(Error::shape("attacker output width mismatch"));
                }
                let shift =
                    Matrix::from_vec_unchecked(1, a_local.len(), a_local.to_vec()).matmul_t(wa)?;
                let cols = h.cols();
                for r in 0..h.rows() {
                    axpy(
                        1.0,
                        shift.as_slice(),
                        &mut h.as_mut_slice()[r * cols..(r + 1) * cols],
                    );
                }
                for layer in &top.layers()[1..top.logit_depth()] {
                    h = layer.forward(&h);
                }
                Ok(h)
            }
            _ => Err(Error::invalid("cache does not belong to this system")),
        }
    }

    /// Predicted classes of the attacker's raw input `x` against every
    /// cached benign row.
    pub fn classes_against(&self, cache: &BenignCache, x: &[f64]) -> Result<Vec<usize>> {
        let a = &self.participants[cache.attacker].model;
        let local = a.predict(&Matrix::row_vector(x)?)?;
        let logits = self.logits_against(cache, local.as_slice())?;
        Ok(logits.iter_rows().map(class_of).collect())
    }

    /// Fraction of cached benign rows for which `x` yields `target`.
    pub fn hit_rate(&self, cache: &BenignCache, x: &[f64], target: usize) -> Result<f64> {
        let classes = self.classes_against(cache, x)?;
        Ok(classes.iter().filter(|&&c| c == target).count() as f64 / classes.len() as f64)
    }

    /// Per-class counts of predictions for `x` across the cached rows.
    pub fn class_histogram(&self, cache: &BenignCache, x: &[f64]) -> Result<Vec<usize>> {
        let mut counts = vec![0; self.classes];
        for c in self.classes_against(cache, x)? {
            counts[c] += 1;
        }
        Ok(counts)
    }
}
