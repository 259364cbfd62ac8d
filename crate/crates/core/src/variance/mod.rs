//! Output variance of HeteroLR and SplitNN units when the benign features
//! follow a Gaussian mixture, with Monte-Carlo oracles and the existence
//! condition for bounded ADIs.

mod gmm;
pub mod normal;

pub use gmm::{fit_gmm_em, Gmm, GmmFit, COVARIANCE_FLOOR};

use std::f64::consts::PI;

use rand::distr::weighted::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::protocol::ProtocolKind;
use normal::{cdf, inverse_mills, pdf};

/// Probit scale matching the logistic sigmoid in L² (σ(x) ≈ Φ(x/σ₁)).
pub const SIGMA_1: f64 = 1.699;
/// Gaussian scale matching the logistic density σ(x)(1 − σ(x)) in L².
pub const SIGMA_2: f64 = 1.630;

/// Distribution of a scalar `offset + θᵀX` with X drawn from a mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarMixture {
    pub weights: Vec<f64>,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl ScalarMixture {
    pub fn new(weights: Vec<f64>, means: Vec<f64>, stds: Vec<f64>) -> Result<Self> {
        if weights.is_empty() || weights.len() != means.len() || weights.len() != stds.len() {
            return Err(Error::invalid(
                "scalar mixture needs matching nonempty vectors",
            ));
        }
        if stds.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::invalid("component std must be finite and >= 0"));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w > 0.0))
            || means.iter().any(|m| !m.is_finite())
        {
            return Err(Error::invalid("invalid scalar mixture parameters"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("mixture weights sum to {total}")));
        }
        Ok(Self {
            weights,
            means,
            stds,
        })
    }

    /// Single Gaussian N(μ, σ²).
    pub fn gaussian(mean: f64, std: f64) -> Result<Self> {
        Self::new(vec![1.0], vec![mean], vec![std])
    }

    fn iter(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        self.weights
            .iter()
            .zip(&self.means)
            .zip(&self.stds)
            .map(|((&w, &m), &s)| (w, m, s))
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let k = if self.weights.len() == 1 {
            0
        } else {
            WeightedIndex::new(&self.weights)
                .expect("validated")
                .sample(rng)
        };
        let z: f64 = StandardNormal.sample(rng);
        self.means[k] + self.stds[k] * z
    }
}

/// Projects a mixture through `offset + θᵀx`: μ′_k = offset + θᵀμ_k and
/// σ′_k² = θᵀΣ_kθ.
pub fn project_mixture(gmm: &Gmm, theta: &[f64], offset: f64) -> Result<ScalarMixture> {
    if theta.len() != gmm.dim() {
        return Err(Error::shape(format!(
            "projection vector has {} entries, mixture dimension is {}",
            theta.len(),
            gmm.dim()
        )));
    }
    let means = gmm
        .means()
        .iter()
        .map(|m| offset + crate::matrix::dot(theta, m))
        .collect();
    let stds = gmm
        .covariances()
        .iter()
        .map(|c| {
            let mut q = 0.0;
            for (i, row) in c.iter_rows().enumerate() {
                q += theta[i] * crate::matrix::dot(row, theta);
            }
            q.max(0.0).sqrt()
        })
        .collect();
    ScalarMixture::new(gmm.weights().to_vec(), means, stds)
}

/// Absolute slack when checking that clamped variances fall as μ′ decreases.
/// The HeteroLR approximation turns negative past μ′ ≈ −3σ′ and re-emerges
/// far out at up to about 2e-10 (σ′ ≤ 5) once its two terms stop cancelling.
pub const MONOTONE_SLACK: f64 = 1e-9;

/// An analytic variance together with its unclamped value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VarianceValue {
    pub value: f64,
    pub raw: f64,
}

impl VarianceValue {
    fn from_raw(raw: f64) -> Self {
        Self {
            value: raw.max(0.0),
            raw,
        }
    }
}

/// Variance of σ(S) for S from the mixture, using the probit approximation
/// E[σ(S)] ≈ Σπ_kΦ(μ′_k/√(σ₁²+σ′_k²)) and the Gaussian approximation of the
/// logistic density for E[σ(S)(1−σ(S))].
pub fn heterolr_variance(sm: &ScalarMixture) -> VarianceValue {
    let mut p = 0.0;
    let mut density = 0.0;
    for (w, mu, s) in sm.iter() {
        p += w * cdf(mu / (SIGMA_1 * SIGMA_1 + s * s).sqrt());
        let v = s * s + SIGMA_2 * SIGMA_2;
        density += w / (2.0 * PI).sqrt() / v.sqrt() * (-0.5 * mu * mu / v).exp();
    }
    VarianceValue::from_raw(p * (1.0 - p) - density)
}

/// How the SplitNN unit variance is assembled.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitnnMode {
    /// Exact truncated moments of the mixture: Var = E[Y₊²] − E[Y₊]².
    #[default]
    ExactMixture,
    /// The per-component formula
    /// P·[Σπ_k²σ′_k²(1 − r_kλ_k − λ_k²) + (Σπ_k(μ′_k + σ′_kλ_k))²(1 − P)],
    /// exact only for one component.
    PerComponent,
}

/// Variance of ReLU(Y) for Y from the mixture.
pub fn splitnn_unit_variance(sm: &ScalarMixture, mode: SplitnnMode) -> VarianceValue {
    match mode {
        SplitnnMode::ExactMixture => {
            let (mut m1, mut m2) = (0.0, 0.0);
            for (w, mu, s) in sm.iter() {
                if s == 0.0 {
                    let pos = mu.max(0.0);
                    m1 += w * pos;
                    m2 += w * pos * pos;
                    continue;
                }
                let r = mu / s;
                let (big, small) = (cdf(r), pdf(r));
                m1 += w * (mu * big + s * small);
                m2 += w * ((mu * mu + s * s) * big + mu * s * small);
            }
            VarianceValue::from_raw(m2 - m1 * m1)
        }
        SplitnnMode::PerComponent => {
            let mut p = 0.0;
            let mut within = 0.0;
            let mut cond_mean = 0.0;
            for (w, mu, s) in sm.iter() {
                if s == 0.0 {
                    // σ′ → 0 limits: truncated variance 0, conditional mean max(μ′, 0).
                    p += if mu > 0.0 { w } else { 0.0 };
                    cond_mean += w * mu.max(0.0);
                    continue;
                }
                let r = mu / s;
                let lambda = inverse_mills(r);
                p += w * cdf(r);
                within += w * w * s * s * (1.0 - r * lambda - lambda * lambda);
                cond_mean += w * (mu + s * lambda);
            }
            VarianceValue::from_raw(p * (within + cond_mean * cond_mean * (1.0 - p)))
        }
    }
}

/// Unbiased sample variance (Welford).
pub fn sample_variance(values: impl IntoIterator<Item = f64>) -> f64 {
    let (mut n, mut mean, mut m2) = (0usize, 0.0, 0.0);
    for x in values {
        n += 1;
        let delta = x - mean;
        mean += delta / n as f64;
        m2 += delta * (x - mean);
    }
    if n < 2 {
        0.0
    } else {
        m2 / (n - 1) as f64
    }
}

/// Monte-Carlo variance of `f(S)` over `n` draws of S from the mixture.
pub fn variance_monte_carlo(
    f: impl Fn(f64) -> f64,
    sm: &ScalarMixture,
    n: usize,
    seed: u64,
) -> Result<f64> {
    if n < 2 {
        return Err(Error::invalid("Monte-Carlo variance needs n >= 2"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(sample_variance((0..n).map(|_| f(sm.sample(&mut rng)))))
}

/// Monte-Carlo variance of `f(x)` over `n` draws of x from a full mixture.
pub fn variance_monte_carlo_gmm(
    f: impl Fn(&[f64]) -> f64,
    gmm: &Gmm,
    n: usize,
    seed: u64,
) -> Result<f64> {
    if n < 2 {
        return Err(Error::invalid("Monte-Carlo variance needs n >= 2"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (data, _) = gmm.sample(n, &mut rng);
    Ok(sample_variance(data.iter_rows().map(&f)))
}

/// Quantities bounding the projected mixture over the admissible mutation
/// box, with r = μ′/σ′.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExistenceBounds {
    pub r_max: f64,
    pub r_min: f64,
    pub mu_max: f64,
    pub mu_min: f64,
    pub sigma_max: f64,
    pub epsilon: f64,
    pub components: usize,
}

/// Which root of Φ² − KΦ + εK = 0 bounds Φ(r_max) in the HeteroLR condition.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeteroRoot {
    /// (K − √(K² − 4εK))/2, the root under which Φ(K − Φ) ≤ εK holds.
    #[default]
    Lower,
    /// (K + √(K² − 4εK))/2, as the condition is usually printed.
    Upper,
}

/// Sufficient condition for an ADI to exist inside the mutation bound.
pub fn bounded_existence_check(
    b: &ExistenceBounds,
    protocol: ProtocolKind,
    root: HeteroRoot,
) -> Result<bool> {
    if !(b.epsilon > 0.0) {
        return Err(Error::invalid("epsilon must be positive"));
    }
    if b.r_min > b.r_max || b.mu_min > b.mu_max || b.sigma_max < 0.0 {
        return Err(Error::invalid("inconsistent existence bounds"));
    }
    Ok(match protocol {
        ProtocolKind::HeteroLR => {
            let k = b.components.max(1) as f64;
            let disc = k * k - 4.0 * b.epsilon * k;
            if disc < 0.0 {
                // Φ(K − Φ) ≤ K²/4 < εK for every Φ.
                true
            } else {
                let bound = match root {
                    HeteroRoot::Lower => (k - disc.sqrt()) / 2.0,
                    HeteroRoot::Upper => (k + disc.sqrt()) / 2.0,
                };
                cdf(b.r_max) <= bound
            }
        }
        ProtocolKind::SplitNN => {
            let p = cdf(b.r_max);
            let tail = if b.sigma_max == 0.0 {
                0.0
            } else {
                let q = pdf(b.r_max) / cdf(b.r_min);
                0.25 * b.sigma_max * b.sigma_max * q * q
            };
            let lhs = p + 0.25 * p * b.mu_min * b.mu_min + 0.25 * b.mu_max * b.mu_max + tail;
            lhs.is_finite() && lhs <= b.epsilon
        }
    })
}
