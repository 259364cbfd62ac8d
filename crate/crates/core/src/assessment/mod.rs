//! Experiment harness: dominating rates, synthesis success rates, reward
//! shares, perturbation-matrix spectra and sweeps over partitions.

mod report;
mod svd;
mod sweep;

pub use report::{ExperimentReport, ReportRow};
pub use svd::{
    build_perturbation_matrix, random_unit_sphere, reconstruct, reconstruct_and_rate,
    singular_spectrum, PerturbationMatrix,
};
pub use sweep::{participants_sweep, partition_ratio_sweep, SweepConfig};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fuzz::argmax_count;
use crate::matrix::Matrix;
use crate::protocol::{BenignCache, VFLSystem};
use crate::synthesis::{AdiCandidate, SynthesisConfig, Synthesizer};

/// Splits `0..n` into contiguous chunks, runs `f` on each chunk on its own
/// thread and concatenates the results in order.
pub(crate) fn parallel_map<T, F>(n: usize, workers: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync,
{
    let workers = workers.clamp(1, n.max(1));
    if workers == 1 {
        return (0..n).map(&f).collect();
    }
    let per = n.div_ceil(workers);
    let f = &f;
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..n)
            .step_by(per)
            .map(|start| {
                scope.spawn(move || {
                    (start..(start + per).min(n))
                        .map(f)
                        .collect::<Result<Vec<T>>>()
                })
            })
            .collect();
        let mut out = Vec::with_capacity(n);
        for h in handles {
            out.extend(h.join().expect("assessment worker panicked")?);
        }
        Ok(out)
    })
}

/// Label the system assigns most often when `x` is paired with every cached
/// benign row, with the fraction of rows assigning it. Ties go to the lowest
/// class.
pub fn majority_label(system: &VFLSystem, cache: &BenignCache, x: &[f64]) -> Result<(usize, f64)> {
    let h = system.class_histogram(cache, x)?;
    let label = argmax_count(&h);
    Ok((label, h[label] as f64 / cache.rows() as f64))
}

/// Majority fraction of each row of the attacker's view against the other
/// participants' aligned views.
pub fn majority_fractions(
    system: &VFLSystem,
    attacker: usize,
    views: &[&Matrix],
    workers: usize,
) -> Result<Vec<f64>> {
    if views.len() != system.participant_count() || attacker >= views.len() {
        return Err(Error::shape("one view per participant required"));
    }
    let benign: Vec<&Matrix> = views
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != attacker)
        .map(|(_, v)| *v)
        .collect();
    let cache = system.benign_cache(attacker, &benign)?;
    let own = views[attacker];
    parallel_map(own.rows(), workers, |i| {
        Ok(majority_label(system, &cache, own.row(i))?.1)
    })
}

/// Fraction of the attacker's unperturbed inputs that already dominate the
/// other participants' test views at `threshold`.
pub fn dominating_rate(
    system: &VFLSystem,
    attacker: usize,
    views: &[&Matrix],
    threshold: f64,
    workers: usize,
) -> Result<f64> {
    Ok(dominating_rates(system, attacker, views, &[threshold], workers)?[0])
}

/// `dominating_rate` at several thresholds from one pass.
pub fn dominating_rates(
    system: &VFLSystem,
    attacker: usize,
    views: &[&Matrix],
    thresholds: &[f64],
    workers: usize,
) -> Result<Vec<f64>> {
    let fr = majority_fractions(system, attacker, views, workers)?;
    Ok(rates_at(&fr, thresholds))
}

fn rates_at(fractions: &[f64], thresholds: &[f64]) -> Vec<f64> {
    thresholds
        .iter()
        .map(|t| fractions.iter().filter(|&&f| f >= *t).count() as f64 / fractions.len() as f64)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuccessSummary {
    /// `(threshold, rate)` pairs.
    pub rates: Vec<(f64, f64)>,
    pub candidates: Vec<AdiCandidate>,
}

impl SuccessSummary {
    pub fn rate_at(&self, threshold: f64) -> Option<f64> {
        self.rates
            .iter()
            .find(|(t, _)| *t == threshold)
            .map(|(_, r)| *r)
    }

    pub fn mean_rounds(&self) -> f64 {
        self.candidates.iter().map(|c| c.rounds as f64).sum::<f64>() / self.candidates.len() as f64
    }
}

/// Runs synthesis from every row of `sample_a` toward its majority label on
/// the check view and reports the fraction reaching each threshold.
pub fn success_rate(
    system: &VFLSystem,
    sample_a: &Matrix,
    s: &[&Matrix],
    check: &BenignCache,
    cfg: &SynthesisConfig,
    thresholds: &[f64],
    workers: usize,
) -> Result<SuccessSummary> {
    if sample_a.rows() == 0 {
        return Err(Error::invalid("success rate needs a nonempty sample"));
    }
    let syn = Synthesizer::new(system, cfg.clone(), s, check)?;
    let candidates = parallel_map(sample_a.rows(), workers, |i| {
        let x = sample_a.row(i);
        let (target, _) = majority_label(system, check, x)?;
        syn.generate(x, target)
    })?;
    let r: Vec<f64> = candidates.iter().map(|c| c.attack_accuracy).collect();
    Ok(SuccessSummary {
        rates: thresholds
            .iter()
            .copied()
            .zip(rates_at(&r, thresholds))
            .collect(),
        candidates,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardShares {
    pub shares: Vec<f64>,
    /// Set when every attribution vanished and shares fell back to uniform.
    pub uniform_fallback: bool,
}

/// Share of each participant in the joint prediction: the L1 norm of its
/// gradient-times-input attribution toward the predicted class, summed over
/// rows and normalized. Plain gradient norms would be input-independent for
/// linear participants.
pub fn reward_shares(system: &VFLSystem, inputs: &[&Matrix]) -> Result<RewardShares> {
    let preds = system.predict(inputs)?;
    let grads = system.class_input_grads(inputs, &preds, false)?;
    let totals: Vec<f64> = grads
        .iter()
        .zip(inputs)
        .map(|(g, x)| {
            g.as_slice()
                .iter()
                .zip(x.as_slice())
                .map(|(a, b)| (a * b).abs())
                .sum()
        })
        .collect();
    let sum: f64 = totals.iter().sum();
    if !(sum > 0.0) || !sum.is_finite() {
        let m = totals.len();
        return Ok(RewardShares {
            shares: vec![1.0 / m as f64; m],
            uniform_fallback: true,
        });
    }
    Ok(RewardShares {
        shares: totals.iter().map(|t| t / sum).collect(),
        uniform_fallback: false,
    })
}

#[cfg(test)]
mod tests;
