//! Gaussian mixtures: validation, sampling and EM fitting.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use rand::distr::weighted::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Added to every covariance diagonal during EM so collapsed components stay
/// invertible.
pub const COVARIANCE_FLOOR: f64 = 1e-9;

const WEIGHT_TOL: f64 = 1e-9;

/// K-component Gaussian mixture over d-vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gmm {
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    covariances: Vec<Matrix>,
}

impl Gmm {
    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, covariances: Vec<Matrix>) -> Result<Self> {
        let k = weights.len();
        if k == 0 || means.len() != k || covariances.len() != k {
            return Err(Error::invalid(
                "mixture needs matching, nonempty weights, means and covariances",
            ));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::invalid("mixture weights must be positive"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_TOL {
            return Err(Error::invalid(format!(
                "mixture weights sum to {total}, not 1"
            )));
        }
        let d = means[0].len();
        if d == 0 {
            return Err(Error::invalid("mixture dimension must be positive"));
        }
        for (mu, cov) in means.iter().zip(&covariances) {
            if mu.len() != d || cov.shape() != (d, d) {
                return Err(Error::shape("mixture component dimensions differ"));
            }
            if mu.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("mixture mean"));
            }
            check_psd(cov)?;
        }
        Ok(Self {
            weights,
            means,
            covariances,
        })
    }

    pub fn components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    pub fn covariances(&self) -> &[Matrix] {
        &self.covariances
    }

    /// Draws `n` samples and their component indices.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> (Matrix, Vec<usize>) {
        let sampler = GmmSampler::new(self);
        let mut data = Vec::with_capacity(n * self.dim());
        let mut labels = Vec::with_capacity(n);
        let mut row = vec![0.0; self.dim()];
        for _ in 0..n {
            labels.push(sampler.draw(rng, &mut row));
            data.extend_from_slice(&row);
        }
        (Matrix::from_vec_unchecked(n, self.dim(), data), labels)
    }

    /// Mean log-likelihood per row.
    pub fn mean_log_likelihood(&self, data: &Matrix) -> Result<f64> {
        if data.cols() != self.dim() {
            return Err(Error::shape("data dimension differs from mixture"));
        }
        let dens = ComponentDensities::new(self)?;
        let mut total = 0.0;
        let mut buf = vec![0.0; self.components()];
        for row in data.iter_rows() {
            total += dens.log_joint(row, &mut buf);
        }
        Ok(total / data.rows().max(1) as f64)
    }
}

fn check_psd(cov: &Matrix) -> Result<()> {
    let d = cov.rows();
    let scale = cov.as_slice().iter().fold(1.0f64, |m, v| m.max(v.abs()));
    for i in 0..d {
        for j in 0..i {
            if (cov.get(i, j) - cov.get(j, i)).abs() > 1e-9 * scale {
                return Err(Error::invalid("covariance is not symmetric"));
            }
        }
    }
    let eig = SymmetricEigen::new(to_na(cov));
    let min = eig
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    if min < -1e-9 * scale {
        return Err(Error::invalid(format!(
            "covariance is not PSD (eigenvalue {min:e})"
        )));
    }
    Ok(())
}

pub(crate) fn to_na(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice())
}

/// Per-component affine maps `x = μ + A·z` with `A·Aᵀ = Σ`.
struct GmmSampler<'a> {
    gmm: &'a Gmm,
    factors: Vec<DMatrix<f64>>,
    pick: WeightedIndex<f64>,
}

impl<'a> GmmSampler<'a> {
    fn new(gmm: &'a Gmm) -> Self {
        // Eigen factors tolerate singular (e.g. zero) covariances, unlike Cholesky.
        let factors = gmm
            .covariances
            .iter()
            .map(|c| {
                let eig = SymmetricEigen::new(to_na(c));
                let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
                eig.eigenvectors * DMatrix::from_diagonal(&roots)
            })
            .collect();
        let pick = WeightedIndex::new(&gmm.weights).expect("weights validated");
        Self { gmm, factors, pick }
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) -> usize {
        let k = self.pick.sample(rng);
        let d = out.len();
        let z = DVector::from_fn(d, |_, _| StandardNormal.sample(rng));
        let x = &self.factors[k] * z;
        for (o, (m, v)) in out.iter_mut().zip(self.gmm.means[k].iter().zip(x.iter())) {
            *o = m + v;
        }
        k
    }
}

/// Cached Cholesky factors for evaluating component log densities.
struct ComponentDensities {
    log_weights: Vec<f64>,
    means: Vec<DVector<f64>>,
    chols: Vec<Cholesky<f64, nalgebra::Dyn>>,
    log_norms: Vec<f64>,
}

impl ComponentDensities {
    fn new(gmm: &Gmm) -> Result<Self> {
        let d = gmm.dim() as f64;
        let mut chols = Vec::new();
        let mut log_norms = Vec::new();
        for cov in &gmm.covariances {
            let mut m = to_na(cov);
            let mut chol = Cholesky::new(m.clone());
            if chol.is_none() {
                for i in 0..cov.rows() {
                    m[(i, i)] += COVARIANCE_FLOOR;
                }
                chol = Cholesky::new(m);
            }
            let chol = chol.ok_or_else(|| Error::invalid("covariance is singular"))?;
            let log_det: f64 = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
            log_norms.push(-0.5 * (d * (2.0 * std::f64::consts::PI).ln() + log_det));
            chols.push(chol);
        }
        Ok(Self {
            log_weights: gmm.weights.iter().map(|w| w.ln()).collect(),
            means: gmm
                .means
                .iter()
                .map(|m| DVector::from_column_slice(m))
                .collect(),
            chols,
            log_norms,
        })
    }

    /// Fills `out[k] = log π_k + log N(x | μ_k, Σ_k)` and returns their log-sum-exp.
    fn log_joint(&self, x: &[f64], out: &mut [f64]) -> f64 {
        let x = DVector::from_column_slice(x);
        for k in 0..out.len() {
            let diff = &x - &self.means[k];
            let solved = self.chols[k]
                .l_dirty()
                .solve_lower_triangular(&diff)
                .expect("cholesky factor is nonsingular");
            out[k] = self.log_weights[k] + self.log_norms[k] - 0.5 * solved.norm_squared();
        }
        log_sum_exp(out)
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Result of an EM run.
#[derive(Debug, Clone, Serialize)]
pub struct GmmFit {
    pub gmm: Gmm,
    /// Mean log-likelihood before each M-step.
    pub log_likelihood: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Fits a K-component mixture by expectation maximization.
///
/// Means start at K distinct rows chosen by the seed. Every M-step adds
/// [`COVARIANCE_FLOOR`] to the covariance diagonal. Stops when the mean
/// log-likelihood improves by less than `tol`.
pub fn fit_gmm_em(
    data: &Matrix,
    k: usize,
    max_iters: usize,
    tol: f64,
    seed: u64,
) -> Result<GmmFit> {
    let (n, d) = data.shape();
    if k == 0 || n < k {
        return Err(Error::invalid(format!(
            "EM needs 1 <= K <= n, got K={k}, n={n}"
        )));
    }
    if d == 0 || !data.all_finite() {
        return Err(Error::invalid(
            "EM data must be finite with at least one column",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let starts = rand::seq::index::sample(&mut rng, n, k).into_vec();
    let global = weighted_moments(data, &vec![1.0; n]);
    let mut gmm = Gmm {
        weights: vec![1.0 / k as f64; k],
        means: starts.iter().map(|&i| data.row(i).to_vec()).collect(),
        covariances: vec![global.1.clone(); k],
    };

    let mut history = Vec::new();
    let mut resp = vec![0.0; n * k];
    let mut converged = false;
    let mut iterations = 0;
    for _ in 0..max_iters.max(1) {
        iterations += 1;
        // E-step
        let dens = ComponentDensities::new(&gmm)?;
        let mut ll = 0.0;
        for (i, row) in data.iter_rows().enumerate() {
            let r = &mut resp[i * k..(i + 1) * k];
            let lse = dens.log_joint(row, r);
            ll += lse;
            for v in r.iter_mut() {
                *v = (*v - lse).exp();
            }
        }
        ll /= n as f64;
        let improved = history.last().map(|prev: &f64| ll - prev);
        history.push(ll);
        if let Some(delta) = improved {
            if delta.abs() < tol {
                converged = true;
                break;
            }
        }
        // M-step
        let mut next = Gmm {
            weights: Vec::with_capacity(k),
            means: Vec::with_capacity(k),
            covariances: Vec::with_capacity(k),
        };
        for c in 0..k {
            let w: Vec<f64> = (0..n).map(|i| resp[i * k + c]).collect();
            let mass: f64 = w.iter().sum();
            if mass <= f64::MIN_POSITIVE {
                // Dead component: restart it on the global moments with a tiny weight.
                next.weights.push(f64::MIN_POSITIVE.max(1e-12));
                next.means.push(global.0.clone());
                next.covariances.push(global.1.clone());
                continue;
            }
            let (mean, cov) = weighted_moments(data, &w);
            next.weights.push(mass / n as f64);
            next.means.push(mean);
            next.covariances.push(cov);
        }
        let total: f64 = next.weights.iter().sum();
        next.weights.iter_mut().for_each(|w| *w /= total);
        gmm = next;
    }
    Ok(GmmFit {
        gmm,
        log_likelihood: history,
        iterations,
        converged,
    })
}

/// Weighted mean and (population) covariance plus the diagonal floor.
fn weighted_moments(data: &Matrix, w: &[f64]) -> (Vec<f64>, Matrix) {
    let d = data.cols();
    let mass: f64 = w.iter().sum();
    let mut mean = vec![0.0; d];
    for (row, &wi) in data.iter_rows().zip(w) {
        crate::matrix::axpy(wi / mass, row, &mut mean);
    }
    let mut cov = vec![0.0; d * d];
    let mut diff = vec![0.0; d];
    for (row, &wi) in data.iter_rows().zip(w) {
        if wi == 0.0 {
            continue;
        }
        for j in 0..d {
            diff[j] = row[j] - mean[j];
        }
        let s = wi / mass;
        for a in 0..d {
            let da = s * diff[a];
            for b in a..d {
                cov[a * d + b] += da * diff[b];
            }
        }
    }
    for a in 0..d {
        for b in 0..a {
            cov[a * d + b] = cov[b * d + a];
        }
        cov[a * d + a] += COVARIANCE_FLOOR;
    }
    (mean, Matrix::from_vec_unchecked(d, d, cov))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn diag(values: &[f64]) -> Matrix {
        let mut m = Matrix::zeros(values.len(), values.len());
        for (i, v) in values.iter().enumerate() {
            m.set(i, i, *v);
        }
        m
    }

    #[test]
    fn validation() {
        assert!(Gmm::new(vec![0.5, 0.4], vec![vec![0.0]; 2], vec![diag(&[1.0]); 2]).is_err());
        assert!(Gmm::new(vec![1.0], vec![vec![0.0]], vec![diag(&[-1.0])]).is_err());
        let asym = Matrix::from_rows(&[vec![1.0, 0.5], vec![0.0, 1.0]]).unwrap();
        assert!(Gmm::new(vec![1.0], vec![vec![0.0, 0.0]], vec![asym]).is_err());
        assert!(Gmm::new(vec![1.0], vec![vec![0.0]], vec![diag(&[0.0])]).is_ok());
    }

    #[test]
    fn single_component_is_closed_form() {
        let data = Matrix::from_rows(&[
            vec![1.0, 2.0],
            vec![3.0, -1.0],
            vec![0.0, 0.5],
            vec![2.0, 4.0],
        ])
        .unwrap();
        let fit = fit_gmm_em(&data, 1, 10, 1e-12, 0).unwrap();
        let mean = [1.5, 1.375];
        for (a, b) in fit.gmm.means()[0].iter().zip(mean) {
            assert!((a - b).abs() < 1e-12);
        }
        // population covariance of column 0: mean of squared deviations
        let var0 = [0.25, 2.25, 2.25, 0.25].iter().sum::<f64>() / 4.0;
        assert!((fit.gmm.covariances()[0].get(0, 0) - var0).abs() < 1e-8);
    }

    #[test]
    fn repeated_point_hits_floor() {
        let data = Matrix::from_rows(&vec![vec![3.0, 3.0]; 10]).unwrap();
        let fit = fit_gmm_em(&data, 1, 5, 1e-12, 0).unwrap();
        let cov = &fit.gmm.covariances()[0];
        assert!((cov.get(0, 0) - COVARIANCE_FLOOR).abs() < 1e-15);
        assert_eq!(cov.get(0, 1), 0.0);
    }

    #[test]
    fn separates_two_clusters_and_likelihood_climbs() {
        let truth = Gmm::new(
            vec![0.5, 0.5],
            vec![vec![-5.0], vec![5.0]],
            vec![diag(&[1.0]), diag(&[1.0])],
        )
        .unwrap();
        let (data, _) = truth.sample(2000, &mut ChaCha8Rng::seed_from_u64(4));
        let fit = fit_gmm_em(&data, 2, 200, 1e-10, 1).unwrap();
        let mut means: Vec<f64> = fit.gmm.means().iter().map(|m| m[0]).collect();
        means.sort_by(f64::total_cmp);
        assert!(
            (means[0] + 5.0).abs() < 0.2 && (means[1] - 5.0).abs() < 0.2,
            "{means:?}"
        );
        for w in fit.log_likelihood.windows(2) {
            assert!(w[1] >= w[0] - 1e-8, "{:?}", fit.log_likelihood);
        }
    }

    #[test]
    fn multivariate_likelihood_is_monotone() {
        let truth = Gmm::new(
            vec![0.3, 0.7],
            vec![vec![0.0, 1.0, -1.0], vec![2.0, -2.0, 0.5]],
            vec![diag(&[1.0, 0.5, 2.0]), diag(&[0.3, 1.0, 1.0])],
        )
        .unwrap();
        let (data, _) = truth.sample(600, &mut ChaCha8Rng::seed_from_u64(8));
        let fit = fit_gmm_em(&data, 3, 60, 0.0, 2).unwrap();
        for w in fit.log_likelihood.windows(2) {
            assert!(w[1] >= w[0] - 1e-8);
        }
    }

    #[test]
    fn sampling_matches_weights() {
        let g = Gmm::new(
            vec![0.7, 0.3],
            vec![vec![0.0], vec![10.0]],
            vec![diag(&[1.0]), diag(&[1.0])],
        )
        .unwrap();
        let (_, labels) = g.sample(10_000, &mut ChaCha8Rng::seed_from_u64(3));
        let c0 = labels.iter().filter(|&&l| l == 0).count() as f64;
        let sd = (10_000.0f64 * 0.7 * 0.3).sqrt();
        assert!((c0 - 7000.0).abs() <= 4.0 * sd);
    }
}
