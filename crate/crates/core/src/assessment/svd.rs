use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::assessment::parallel_map;
use crate::error::{Error, Result};
use crate::matrix::{l2_norm, Matrix};
use crate::protocol::{BenignCache, VFLSystem};
use crate::synthesis::{SynthesisConfig, Synthesizer};

/// Perturbations below this L2 norm count as zero.
const ZERO_NORM: f64 = 1e-12;

/// Unit-normalized single-row perturbations of one attacker input, one per
/// column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationMatrix {
    /// d_A × h matrix of unit columns.
    pub columns: Matrix,
    /// L2 norm of each kept perturbation before normalization.
    pub norms: Vec<f64>,
    /// Benign rows whose perturbation was kept, in column order.
    pub kept: Vec<usize>,
    /// Benign rows whose perturbation was zero.
    pub dropped: Vec<usize>,
    pub base: Vec<f64>,
    pub target: usize,
}

impl PerturbationMatrix {
    /// Mean of the raw perturbations.
    pub fn mean_perturbation(&self) -> Vec<f64> {
        let h = self.norms.len() as f64;
        let mut mean = vec![0.0; self.columns.rows()];
        for (i, m) in mean.iter_mut().enumerate() {
            *m = self
                .columns
                .row(i)
                .iter()
                .zip(&self.norms)
                .map(|(v, n)| v * n)
                .sum::<f64>()
                / h;
        }
        mean
    }
}

/// One synthesis pass per row of the benign views, each using that row
/// alone as S while success is judged on `check`. Zero perturbations are
/// dropped and listed.
pub fn build_perturbation_matrix(
    system: &VFLSystem,
    benign_rows: &[&Matrix],
    x_a: &[f64],
    target: usize,
    check: &BenignCache,
    cfg: &SynthesisConfig,
    workers: usize,
) -> Result<PerturbationMatrix> {
    let h = benign_rows.first().map_or(0, |v| v.rows());
    if h < 2 {
        return Err(Error::invalid(
            "perturbation matrix needs at least two benign rows",
        ));
    }
    let perturbations = parallel_map(h, workers, |i| {
        let single: Vec<Matrix> = benign_rows.iter().map(|v| v.select_rows(&[i])).collect();
        let refs: Vec<&Matrix> = single.iter().collect();
        Ok(Synthesizer::new(system, cfg.clone(), &refs, check)?
            .generate(x_a, target)?
            .perturbation)
    })?;
    let d = x_a.len();
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    let mut norms = Vec::new();
    let mut cols: Vec<Vec<f64>> = Vec::new();
    for (i, v) in perturbations.into_iter().enumerate() {
        let n = l2_norm(&v);
        if n < ZERO_NORM {
            dropped.push(i);
            continue;
        }
        kept.push(i);
        norms.push(n);
        cols.push(v.into_iter().map(|x| x / n).collect());
    }
    if cols.is_empty() {
        return Err(Error::invalid("every perturbation was zero"));
    }
    let mut columns = Matrix::zeros(d, cols.len());
    for (j, c) in cols.iter().enumerate() {
        for (i, v) in c.iter().enumerate() {
            columns.set(i, j, *v);
        }
    }
    Ok(PerturbationMatrix {
        columns,
        norms,
        kept,
        dropped,
        base: x_a.to_vec(),
        target,
    })
}

fn to_nalgebra(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice())
}

/// Singular values in descending order.
pub fn singular_spectrum(n: &Matrix) -> Vec<f64> {
    if n.rows() == 0 || n.cols() == 0 {
        return Vec::new();
    }
    to_nalgebra(n)
        .svd(false, false)
        .singular_values
        .iter()
        .copied()
        .collect()
}

/// d × h matrix of columns drawn uniformly from the unit sphere.
pub fn random_unit_sphere(d: usize, h: usize, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = Matrix::zeros(d, h);
    for j in 0..h {
        let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        let n = l2_norm(&v);
        for (i, x) in v.iter().enumerate() {
            m.set(i, j, x / n);
        }
    }
    m
}

/// Projects the mean perturbation onto the top `k` left singular vectors of
/// the matrix, applies it to the base input and returns its attack accuracy
/// toward the matrix's target on `check`.
pub fn reconstruct_and_rate(
    pm: &PerturbationMatrix,
    k: usize,
    system: &VFLSystem,
    check: &BenignCache,
) -> Result<f64> {
    let x = reconstruct(pm, k)?;
    system.hit_rate(check, &x, pm.target)
}

/// The base input plus the rank-`k` reconstruction of the mean perturbation.
pub fn reconstruct(pm: &PerturbationMatrix, k: usize) -> Result<Vec<f64>> {
    let svd = to_nalgebra(&pm.columns).svd(true, false);
    let rank = svd.rank(ZERO_NORM);
    if k == 0 || k > rank {
        return Err(Error::invalid(format!("k = {k} must lie in [1, {rank}]")));
    }
    let u = svd.u.expect("left vectors requested");
    let uk = u.columns(0, k);
    let mean = DVector::from_vec(pm.mean_perturbation());
    let proj = &uk * (uk.transpose() * mean);
    Ok(pm
        .base
        .iter()
        .zip(proj.iter())
        .map(|(b, v)| b + v)
        .collect())
}
