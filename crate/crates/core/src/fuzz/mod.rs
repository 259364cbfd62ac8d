//! Saliency-guided greybox fuzzing over A's input space.
//!
//! Benign participants share only scalar saliency scores for the candidate
//! being tested; inputs that lower those scores are kept for further
//! mutation, and inputs whose joint prediction is stable across the tiny
//! dataset S are confirmed as ADIs on the full benign test view.

mod campaign;
mod cooperation;

pub use campaign::{CampaignLogEntry, CampaignResult, FuzzOutcome};
pub use cooperation::{CooperationOutcome, CooperationRound};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{l1_norm, Matrix};
use crate::protocol::{BenignCache, ProtocolMessage, VFLSystem, ADVERSARY};

/// How masks are produced; recorded in campaign results.
pub const MASK_METHOD: &str = "normalized input-gradient magnitude of the predicted-class logit";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CampaignConfig {
    pub max_iter: usize,
    /// Mutations per popped seed.
    pub energy: usize,
    /// Mask weight of the saliency-aware mutation.
    pub alpha: f64,
    /// Fraction of S that must yield the target for a candidate to count.
    pub stable_fraction: f64,
    /// Noised copies per outer step of the cooperation procedure.
    pub noise_trials: usize,
    /// Inner repeats of the cooperation procedure.
    pub inner_repeats: usize,
    /// Outer repeats of the cooperation procedure; defaults to `max_iter`.
    pub outer_repeats: Option<usize>,
    /// Wallclock budget in seconds.
    pub budget_secs: Option<f64>,
    /// Dominating thresholds at which found ADIs are counted.
    pub thresholds: Vec<f64>,
    /// Noise standard deviation as a multiple of sqrt(Λ).
    pub noise_scale: f64,
    /// Seeds popped per scheduling step. Fixed independently of the worker
    /// count so results do not depend on parallelism.
    pub batch: usize,
    pub workers: usize,
    /// Run one cooperation procedure per popped seed and audit its messages.
    pub trace_cooperation: bool,
    pub seed: u64,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        Self {
            max_iter: 5000,
            energy: 20,
            alpha: 0.2,
            stable_fraction: 1.0,
            noise_trials: 8,
            inner_repeats: 5,
            outer_repeats: None,
            budget_secs: None,
            thresholds: vec![0.95, 0.99],
            noise_scale: 0.1,
            batch: 8,
            workers: 1,
            trace_cooperation: false,
            seed: 0,
        }
    }
}

impl CampaignConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iter == 0
            || self.energy == 0
            || self.noise_trials == 0
            || self.inner_repeats == 0
        {
            return Err(Error::invalid("campaign counts must be at least 1"));
        }
        if self.outer_repeats == Some(0) || self.batch == 0 || self.workers == 0 {
            return Err(Error::invalid("campaign counts must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::invalid("mask weight alpha must lie in [0, 1]"));
        }
        if !(self.stable_fraction > 0.0 && self.stable_fraction <= 1.0) {
            return Err(Error::invalid("stable fraction must lie in (0, 1]"));
        }
        if self.thresholds.is_empty() || self.thresholds.iter().any(|t| !(*t > 0.0 && *t <= 1.0)) {
            return Err(Error::invalid(
                "thresholds must be nonempty and lie in (0, 1]",
            ));
        }
        if !(self.noise_scale.is_finite() && self.noise_scale >= 0.0) {
            return Err(Error::invalid("noise scale must be finite and >= 0"));
        }
        Ok(())
    }

    /// Lowest threshold; candidates below it are not reported.
    pub fn report_threshold(&self) -> f64 {
        self.thresholds
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }
}

/// Per-feature mask in [0, 1] for one participant's input.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMask(pub Vec<f64>);

/// Input rows of every participant for one joint sample.
fn single_rows(rows: &[&[f64]]) -> Result<Vec<Matrix>> {
    rows.iter().map(|r| Matrix::row_vector(r)).collect()
}

/// |∂(logit of `label`)/∂x_p| rescaled by its maximum; all zeros when the
/// gradient vanishes.
pub fn compute_mask(
    system: &VFLSystem,
    rows: &[&[f64]],
    participant: usize,
    label: usize,
) -> Result<SaliencyMask> {
    let inputs = single_rows(rows)?;
    let refs: Vec<&Matrix> = inputs.iter().collect();
    let g = system.class_input_grads(&refs, &[label], true)?;
    let p = g
        .get(participant)
        .ok_or_else(|| Error::invalid("participant out of range"))?;
    Ok(normalize_mask(p.row(0)))
}

fn normalize_mask(grad: &[f64]) -> SaliencyMask {
    let max = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    if max == 0.0 {
        return SaliencyMask(vec![0.0; grad.len()]);
    }
    SaliencyMask(grad.iter().map(|g| g.abs() / max).collect())
}

/// Per-participant normalizers for saliency scores: the 99th percentile of
/// the L1 norm of ∂(predicted-class probability)/∂x_p over reference rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaliencyCalibration {
    pub q99: Vec<Option<f64>>,
}

/// Rows per calibration batch.
const CALIBRATION_CHUNK: usize = 512;

impl SaliencyCalibration {
    /// Calibrates every participant on aligned reference views.
    pub fn fit(system: &VFLSystem, views: &[&Matrix]) -> Result<Self> {
        let n = views.first().map_or(0, |v| v.rows());
        if n == 0 {
            return Err(Error::invalid("calibration needs at least one row"));
        }
        let mut norms: Vec<Vec<f64>> = vec![Vec::with_capacity(n); system.participant_count()];
        let idx: Vec<usize> = (0..n).collect();
        for chunk in idx.chunks(CALIBRATION_CHUNK) {
            let part: Vec<Matrix> = views.iter().map(|v| v.select_rows(chunk)).collect();
            let refs: Vec<&Matrix> = part.iter().collect();
            let preds = system.predict(&refs)?;
            let grads = system.class_input_grads(&refs, &preds, false)?;
            for (p, g) in grads.iter().enumerate() {
                norms[p].extend(g.iter_rows().map(l1_norm));
            }
        }
        Ok(Self {
            q99: norms
                .into_iter()
                .map(|v| Some(percentile(v, 0.99)))
                .collect(),
        })
    }
}

/// Nearest-rank percentile.
fn percentile(mut v: Vec<f64>, q: f64) -> f64 {
    v.sort_by(f64::total_cmp);
    let rank = ((q * v.len() as f64).ceil() as usize).clamp(1, v.len());
    v[rank - 1]
}

fn scale_score(l1: f64, q: f64) -> f64 {
    if q > 0.0 {
        (l1 / q).clamp(0.0, 1.0)
    } else if l1 > 0.0 {
        1.0
    } else {
        0.0
    }
}

/// Saliency score in [0, 1] of `participant` for one joint sample: the L1
/// norm of its predicted-class probability gradient over the calibrated
/// 99th percentile.
pub fn saliency_score(
    system: &VFLSystem,
    rows: &[&[f64]],
    participant: usize,
    calib: &SaliencyCalibration,
) -> Result<f64> {
    let q = calib
        .q99
        .get(participant)
        .copied()
        .flatten()
        .ok_or(Error::CalibrationMissing(participant))?;
    let inputs = single_rows(rows)?;
    let refs: Vec<&Matrix> = inputs.iter().collect();
    let pred = system.predict(&refs)?;
    let g = system.class_input_grads(&refs, &pred, false)?;
    let l1 = l1_norm(
        g.get(participant)
            .ok_or_else(|| Error::invalid("participant out of range"))?
            .as_slice(),
    );
    Ok(scale_score(l1, q))
}

/// True iff at least `stable_fraction` of the pairings of `x_a` with the
/// rows of S yield `target`.
pub fn is_adi(
    system: &VFLSystem,
    x_a: &[f64],
    s: &[&Matrix],
    target: usize,
    stable_fraction: f64,
) -> Result<bool> {
    let cache = system.benign_cache(ADVERSARY, s)?;
    Ok(system.hit_rate(&cache, x_a, target)? >= stable_fraction)
}

/// One queued input with its lineage bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FuzzSeed {
    pub input: Vec<f64>,
    /// Unmutated corpus input this seed descends from.
    pub origin: Vec<f64>,
    pub target: usize,
    /// Lowest mean benign saliency score seen along this lineage.
    pub best_score: f64,
    pub lineage: usize,
    pub id: usize,
}

/// Shared state for mutating and judging inputs of A against S.
pub struct Fuzzer<'a> {
    system: &'a VFLSystem,
    /// Benign rows of S, one matrix per benign participant.
    s: Vec<Matrix>,
    s_cache: BenignCache,
    /// Full benign test view used to confirm ADIs.
    check: &'a BenignCache,
    calib: SaliencyCalibration,
    bound: Vec<f64>,
    cfg: CampaignConfig,
    interceptor: Option<Interceptor<'a>>,
}

/// Hook run over every cooperation trace before it is audited.
pub type Interceptor<'a> = Box<dyn Fn(&mut Vec<ProtocolMessage>) + Send + Sync + 'a>;

impl<'a> Fuzzer<'a> {
    pub fn new(
        system: &'a VFLSystem,
        s: &[&Matrix],
        check: &'a BenignCache,
        calib: SaliencyCalibration,
        bound: Vec<f64>,
        cfg: CampaignConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        if bound.len() != system.participants[ADVERSARY].columns.len() {
            return Err(Error::shape("bound length differs from A's feature count"));
        }
        if bound.iter().any(|b| !(b.is_finite() && *b > 0.0)) {
            return Err(Error::invalid("bound entries must be positive"));
        }
        if check.attacker() != ADVERSARY {
            return Err(Error::invalid(
                "check cache must be built for the adversary",
            ));
        }
        for p in 1..system.participant_count() {
            if calib.q99.get(p).copied().flatten().is_none() {
                return Err(Error::CalibrationMissing(p));
            }
        }
        let s_cache = system.benign_cache(ADVERSARY, s)?;
        Ok(Self {
            system,
            s: s.iter().map(|m| (*m).clone()).collect(),
            s_cache,
            check,
            calib,
            bound,
            cfg,
            interceptor: None,
        })
    }

    /// Installs a hook that may rewrite cooperation traces before auditing.
    pub fn with_interceptor(mut self, hook: Interceptor<'a>) -> Self {
        self.interceptor = Some(hook);
        self
    }

    pub fn config(&self) -> &CampaignConfig {
        &self.cfg
    }

    fn s_len(&self) -> usize {
        self.s[0].rows()
    }

    fn pair<'b>(&'b self, x_a: &'b [f64], j: usize) -> Vec<&'b [f64]> {
        let mut rows = vec![x_a];
        rows.extend(self.s.iter().map(|v| v.row(j)));
        rows
    }

    /// Most frequent joint label of `x_a` across S (lowest class on ties).
    pub fn target_label(&self, x_a: &[f64]) -> Result<usize> {
        let h = self.system.class_histogram(&self.s_cache, x_a)?;
        Ok(argmax_count(&h))
    }

    pub fn is_adi(&self, x_a: &[f64], target: usize) -> Result<bool> {
        Ok(self.system.hit_rate(&self.s_cache, x_a, target)? >= self.cfg.stable_fraction)
    }

    /// Mean saliency score of the benign participants over S.
    pub fn benign_score(&self, x_a: &[f64]) -> Result<f64> {
        let n = self.s_len();
        let a = Matrix::broadcast_row(x_a, n);
        let mut refs: Vec<&Matrix> = vec![&a];
        refs.extend(self.s.iter());
        let preds = self.system.predict(&refs)?;
        let grads = self.system.class_input_grads(&refs, &preds, false)?;
        let mut total = 0.0;
        for (p, g) in grads.iter().enumerate().skip(1) {
            let q = self.calib.q99[p].expect("checked at construction");
            total += g
                .iter_rows()
                .map(|r| scale_score(l1_norm(r), q))
                .sum::<f64>();
        }
        Ok(total / (n * (grads.len() - 1)) as f64)
    }

    /// True iff `new_score` is strictly below the seed's recorded best.
    pub fn reduce_saliency(old_best: f64, new_score: f64) -> bool {
        new_score < old_best
    }

    /// Clamps `x` into the box of half-width Λ around `origin`.
    pub fn clamp_to_bound(&self, x: &mut [f64], origin: &[f64]) {
        for ((v, o), b) in x.iter_mut().zip(origin).zip(&self.bound) {
            *v = v.clamp(o - b, o + b);
        }
    }

    fn noise<R: Rng>(&self, x: &mut [f64], rng: &mut R) {
        if self.cfg.noise_scale == 0.0 {
            return;
        }
        for (v, b) in x.iter_mut().zip(&self.bound) {
            let n = Normal::new(0.0, self.cfg.noise_scale * b.sqrt()).expect("positive std");
            *v += n.sample(rng);
        }
    }

    /// Saliency-aware mutation: noise, then one mask update per element of
    /// S, then the Λ clamp around the lineage origin. `seed_mask` is A's
    /// mask for the unmutated seed.
    pub fn mutate<R: Rng>(
        &self,
        seed: &FuzzSeed,
        seed_mask: &SaliencyMask,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        let mut x = seed.input.clone();
        self.noise(&mut x, rng);
        let alpha = self.cfg.alpha;
        if alpha > 0.0 {
            for j in 0..self.s_len() {
                let rows = self.pair(&x, j);
                let inputs = single_rows(&rows)?;
                let refs: Vec<&Matrix> = inputs.iter().collect();
                let pred = self.system.predict(&refs)?[0];
                let g = self.system.class_input_grads(&refs, &[pred], true)?;
                let mask = normalize_mask(g[ADVERSARY].row(0));
                let agree = pred == seed.target;
                for (i, v) in x.iter_mut().enumerate() {
                    let unit = self.bound[i].sqrt();
                    if agree {
                        *v += alpha * mask.0[i] * unit;
                    } else {
                        *v -= alpha * (mask.0[i] - seed_mask.0[i]).max(0.0) * unit;
                    }
                }
            }
        }
        self.clamp_to_bound(&mut x, &seed.origin);
        Ok(x)
    }

    /// Mean of A's masks toward the seed's target over S.
    pub fn seed_mask(&self, seed: &FuzzSeed) -> Result<SaliencyMask> {
        let n = self.s_len();
        let a = Matrix::broadcast_row(&seed.input, n);
        let mut refs: Vec<&Matrix> = vec![&a];
        refs.extend(self.s.iter());
        let g = self
            .system
            .class_input_grads(&refs, &vec![seed.target; n], true)?;
        // Signed gradients would cancel across S; average magnitudes.
        let mut mag = vec![0.0; g[ADVERSARY].cols()];
        for r in g[ADVERSARY].iter_rows() {
            for (m, v) in mag.iter_mut().zip(r) {
                *m += v.abs() / n as f64;
            }
        }
        Ok(normalize_mask(&mag))
    }

    /// Attack accuracy of `x_a` on the full benign test view.
    pub fn confirm(&self, x_a: &[f64], target: usize) -> Result<f64> {
        self.system.hit_rate(self.check, x_a, target)
    }

    pub(crate) fn audit(&self, messages: &mut Vec<ProtocolMessage>) -> Result<()> {
        if let Some(hook) = &self.interceptor {
            hook(messages);
        }
        crate::protocol::privacy_audit(messages, ADVERSARY)
    }
}

pub(crate) fn argmax_count(h: &[usize]) -> usize {
    let mut best = 0;
    for (i, &c) in h.iter().enumerate() {
        if c > h[best] {
            best = i;
        }
    }
    best
}
