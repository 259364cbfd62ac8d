//! Gradient-based synthesis of adversarial dominating inputs (ADIs).
//!
//! A's input is pushed towards a target label while the sensitivity of the
//! joint output to the benign participants' inputs is driven down. Benign
//! sensitivity is measured as the L1 norm of the gradient of the output
//! spread with respect to their features: analytically when A sees the
//! benign models (whitebox), by forward differences over precomputed
//! benign local outputs otherwise (blackbox).

mod candidate;

pub use candidate::{read_candidates, write_candidates, AdiCandidate, Provenance};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::protocol::{cross_entropy_logit_grad, BenignCache, GradAt, VFLSystem, ADVERSARY};

/// Floor for per-feature mutation bounds.
pub const BOUND_FLOOR: f64 = 1e-6;

/// Step used for the central-difference Hessian-vector product that
/// differentiates the whitebox saliency with respect to A's input.
const HVP_STEP: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Random,
    Bounded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Whitebox,
    Blackbox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthesisConfig {
    pub strategy: Strategy,
    pub mode: Mode,
    /// Weight of the benign saliency term.
    pub alpha: f64,
    /// Weight of the target-label cross-entropy.
    pub beta: f64,
    /// Weight of the per-round L2 penalty (bounded strategy only).
    pub gamma: f64,
    /// Momentum carried from one round's step into the next.
    pub momentum: f64,
    /// Per-feature bound on |V|; required by the bounded strategy.
    pub bound: Option<Vec<f64>>,
    /// Maximum number of rounds; one round processes one element of S.
    pub rounds: usize,
    /// Dominating threshold as a fraction in (0, 1].
    pub threshold: f64,
    pub inner_steps: usize,
    /// Inner gradient-descent step; defaults to 0.05 (random) or 0.01 (bounded).
    pub inner_lr: Option<f64>,
    /// Forward-difference step for blackbox saliency.
    pub fdm_step: f64,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::Random,
            mode: Mode::Whitebox,
            alpha: 1.0,
            beta: 1.0,
            gamma: 0.1,
            momentum: 0.9,
            bound: None,
            rounds: 400,
            threshold: 0.95,
            inner_steps: 10,
            inner_lr: None,
            fdm_step: 1e-3,
        }
    }
}

impl SynthesisConfig {
    pub fn inner_lr(&self) -> f64 {
        self.inner_lr.unwrap_or(match self.strategy {
            Strategy::Random => 0.05,
            Strategy::Bounded => 0.01,
        })
    }

    pub fn validate(&self, dim_a: usize) -> Result<()> {
        let nonneg = |v: f64| v.is_finite() && v >= 0.0;
        if !(nonneg(self.alpha) && nonneg(self.beta) && nonneg(self.gamma)) {
            return Err(Error::invalid(
                "alpha, beta and gamma must be finite and >= 0",
            ));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid("momentum must lie in [0, 1)"));
        }
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return Err(Error::invalid("threshold must lie in (0, 1]"));
        }
        if !(self.fdm_step.is_finite() && self.fdm_step > 0.0) {
            return Err(Error::invalid("finite-difference step must be positive"));
        }
        if !nonneg(self.inner_lr()) {
            return Err(Error::invalid(
                "inner learning rate must be finite and >= 0",
            ));
        }
        match (&self.bound, self.strategy) {
            (Some(b), _) if b.len() != dim_a => Err(Error::shape(format!(
                "bound has {} entries, A has {dim_a} features",
                b.len()
            ))),
            (Some(b), _) if !b.iter().all(|&v| v.is_finite() && v > 0.0) => {
                Err(Error::invalid("bound entries must be positive"))
            }
            (None, Strategy::Bounded) => {
                Err(Error::invalid("bounded strategy needs a bound vector"))
            }
            _ => Ok(()),
        }
    }
}

/// Spread of an output vector: the population variance of its components,
/// or the value itself for a single sigmoid output.
pub fn output_spread(output: &[f64]) -> f64 {
    match output.len() {
        0 => 0.0,
        1 => output[0],
        c => {
            let mean = output.iter().sum::<f64>() / c as f64;
            output.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64
        }
    }
}

fn spread_grad(output: &[f64]) -> Vec<f64> {
    match output.len() {
        1 => vec![1.0],
        c => {
            let mean = output.iter().sum::<f64>() / c as f64;
            output.iter().map(|v| 2.0 * (v - mean) / c as f64).collect()
        }
    }
}

fn spread_grads(output: &Matrix) -> Matrix {
    let data = output.iter_rows().flat_map(spread_grad).collect();
    Matrix::new(output.rows(), output.cols(), data).expect("same shape")
}

/// Per-feature population variance of A's training view, floored and scaled.
pub fn default_bound(train_view_a: &Matrix, multiplier: f64) -> Result<Vec<f64>> {
    let n = train_view_a.rows();
    if n < 2 {
        return Err(Error::invalid("bound needs at least two training rows"));
    }
    if !(multiplier.is_finite() && multiplier > 0.0) {
        return Err(Error::invalid("bound multiplier must be positive"));
    }
    let mean: Vec<f64> = train_view_a
        .col_sums()
        .iter()
        .map(|s| s / n as f64)
        .collect();
    let mut var = vec![0.0; mean.len()];
    for row in train_view_a.iter_rows() {
        for ((v, x), m) in var.iter_mut().zip(row).zip(&mean) {
            *v += (x - m) * (x - m);
        }
    }
    Ok(var
        .into_iter()
        .map(|v| (v / n as f64).max(BOUND_FLOOR) * multiplier)
        .collect())
}

fn joint_inputs(x_a: &[f64], benign: &[&[f64]]) -> Result<Vec<Matrix>> {
    let mut out = vec![Matrix::row_vector(x_a)?];
    for b in benign {
        out.push(Matrix::row_vector(b)?);
    }
    Ok(out)
}

fn check_benign(system: &VFLSystem, benign: &[&[f64]]) -> Result<()> {
    if benign.len() + 1 != system.participant_count() {
        return Err(Error::shape(
            "one benign row per non-adversary participant required",
        ));
    }
    Ok(())
}

/// Gradient of the output spread with respect to every benign input,
/// concatenated in participant order.
fn benign_spread_grad(system: &VFLSystem, x_a: &[f64], benign: &[&[f64]]) -> Result<Vec<f64>> {
    check_benign(system, benign)?;
    let inputs = joint_inputs(x_a, benign)?;
    let refs: Vec<&Matrix> = inputs.iter().collect();
    let trace = system.trace(&refs)?;
    let g = system.backward(&trace, GradAt::Output(&spread_grads(trace.output())), false)?;
    Ok(g.locals[1..]
        .iter()
        .flat_map(|l| l.input.as_slice().to_vec())
        .collect())
}

/// Whitebox saliency: L1 norm of the spread gradient with respect to the
/// benign inputs.
pub fn saliency_est(system: &VFLSystem, x_a: &[f64], benign: &[&[f64]]) -> Result<f64> {
    Ok(benign_spread_grad(system, x_a, benign)?
        .iter()
        .map(|g| g.abs())
        .sum())
}

/// Blackbox saliency by forward differences: one joint inference at the
/// benign rows plus one per benign feature, evaluated as a single batch.
pub fn saliency_est_fdm(
    system: &VFLSystem,
    x_a: &[f64],
    benign: &[&[f64]],
    step: f64,
) -> Result<f64> {
    check_benign(system, benign)?;
    if !(step.is_finite() && step > 0.0) {
        return Err(Error::invalid("finite-difference step must be positive"));
    }
    let views = perturbed_views(benign, step)?;
    let rows = views[0].rows();
    let a = Matrix::broadcast_row(x_a, rows);
    let mut refs: Vec<&Matrix> = vec![&a];
    refs.extend(views.iter());
    let out = system.joint_inference(&refs)?;
    let base = output_spread(out.row(0));
    Ok((1..rows)
        .map(|k| (output_spread(out.row(k)) - base).abs() / step)
        .sum())
}

/// Row 0 holds the benign rows unchanged; row k adds `step` to the k-th
/// benign feature (features enumerated across participants in order).
fn perturbed_views(benign: &[&[f64]], step: f64) -> Result<Vec<Matrix>> {
    let total: usize = benign.iter().map(|b| b.len()).sum();
    let mut views: Vec<Matrix> = benign
        .iter()
        .map(|b| Matrix::broadcast_row(b, total + 1))
        .collect();
    let mut k = 1;
    for v in &mut views {
        for j in 0..v.cols() {
            let x = v.get(k, j);
            v.set(k, j, x + step);
            k += 1;
        }
    }
    Ok(views)
}

/// Def. 2 attack accuracy: the fraction of benign test rows for which the
/// joint prediction with `x_a` is `target`.
pub fn attack_accuracy(
    system: &VFLSystem,
    x_a: &[f64],
    target: usize,
    benign_views: &[&Matrix],
) -> Result<f64> {
    let cache = system.benign_cache(ADVERSARY, benign_views)?;
    system.hit_rate(&cache, x_a, target)
}

/// Gradient-based ADI generator for one trained system and tiny dataset S.
pub struct Synthesizer<'a> {
    system: &'a VFLSystem,
    cfg: SynthesisConfig,
    /// Benign rows of S, one matrix per benign participant.
    s: Vec<Matrix>,
    /// Blackbox only: benign local outputs on S and S*, per S row and
    /// benign participant, with row 0 unperturbed.
    offline: Vec<Vec<Matrix>>,
    check: &'a BenignCache,
}

impl<'a> Synthesizer<'a> {
    /// `s` holds the tiny dataset as aligned benign views; `check` is the
    /// benign cache on which attack accuracy decides success.
    pub fn new(
        system: &'a VFLSystem,
        cfg: SynthesisConfig,
        s: &[&Matrix],
        check: &'a BenignCache,
    ) -> Result<Self> {
        cfg.validate(system.participants[ADVERSARY].columns.len())?;
        if s.len() + 1 != system.participant_count() {
            return Err(Error::shape("S must hold one view per benign participant"));
        }
        let n = s[0].rows();
        if n == 0 || s.iter().any(|v| v.rows() != n) {
            return Err(Error::invalid("S must be nonempty with aligned rows"));
        }
        for (v, p) in s.iter().zip(&system.participants[1..]) {
            if v.cols() != p.columns.len() {
                return Err(Error::shape("S view width does not match participant"));
            }
        }
        if check.attacker() != ADVERSARY {
            return Err(Error::invalid(
                "check cache must be built for the adversary",
            ));
        }
        let s: Vec<Matrix> = s.iter().map(|v| (*v).clone()).collect();
        let offline = match cfg.mode {
            Mode::Whitebox => Vec::new(),
            Mode::Blackbox => (0..n)
                .map(|i| {
                    let rows: Vec<&[f64]> = s.iter().map(|v| v.row(i)).collect();
                    perturbed_views(&rows, cfg.fdm_step)?
                        .iter()
                        .zip(&system.participants[1..])
                        .map(|(v, p)| p.local_output(v))
                        .collect()
                })
                .collect::<Result<_>>()?,
        };
        Ok(Self {
            system,
            cfg,
            s,
            offline,
            check,
        })
    }

    pub fn config(&self) -> &SynthesisConfig {
        &self.cfg
    }

    fn benign_row(&self, i: usize) -> Vec<&[f64]> {
        self.s.iter().map(|v| v.row(i)).collect()
    }

    /// Gradients of the target loss and of the saliency term with respect to
    /// A's input, paired with S row `i`.
    fn grads(&self, x_a: &[f64], i: usize, target: usize) -> Result<(Vec<f64>, Vec<f64>)> {
        match self.cfg.mode {
            Mode::Whitebox => self.whitebox_grads(x_a, i, target),
            Mode::Blackbox => self.blackbox_grads(x_a, i, target),
        }
    }

    fn whitebox_grads(&self, x_a: &[f64], i: usize, target: usize) -> Result<(Vec<f64>, Vec<f64>)> {
        let sys = self.system;
        let benign = self.benign_row(i);
        let inputs = joint_inputs(x_a, &benign)?;
        let refs: Vec<&Matrix> = inputs.iter().collect();
        let trace = sys.trace(&refs)?;
        let g_loss = cross_entropy_logit_grad(trace.output(), &[target], 1.0);
        let loss = sys.backward(&trace, GradAt::Logits(&g_loss), false)?;
        let spread = sys.backward(&trace, GradAt::Output(&spread_grads(trace.output())), false)?;
        // d/dx_A ||g_B||_1 = H_AB · sign(g_B), with H_AB the mixed Hessian of
        // the spread; taken as a central difference of ∇_A along sign(g_B).
        let dirs: Vec<Vec<f64>> = spread.locals[1..]
            .iter()
            .map(|l| l.input.as_slice().iter().map(|g| sign(*g)).collect())
            .collect();
        if dirs.iter().all(|d| d.iter().all(|&v| v == 0.0)) {
            return Ok((
                loss.locals[0].input.as_slice().to_vec(),
                vec![0.0; x_a.len()],
            ));
        }
        let mut pair = vec![Matrix::broadcast_row(x_a, 2)];
        for (b, d) in benign.iter().zip(&dirs) {
            let plus: Vec<f64> = b.iter().zip(d).map(|(x, v)| x + HVP_STEP * v).collect();
            let minus: Vec<f64> = b.iter().zip(d).map(|(x, v)| x - HVP_STEP * v).collect();
            pair.push(Matrix::from_rows(&[plus, minus])?);
        }
        let refs: Vec<&Matrix> = pair.iter().collect();
        let t2 = sys.trace(&refs)?;
        let g2 = sys.backward(&t2, GradAt::Output(&spread_grads(t2.output())), false)?;
        let ga = &g2.locals[0].input;
        let hvp = ga
            .row(0)
            .iter()
            .zip(ga.row(1))
            .map(|(p, m)| (p - m) / (2.0 * HVP_STEP))
            .collect();
        Ok((loss.locals[0].input.as_slice().to_vec(), hvp))
    }

    fn blackbox_grads(&self, x_a: &[f64], i: usize, target: usize) -> Result<(Vec<f64>, Vec<f64>)> {
        let sys = self.system;
        let model = &sys.participants[ADVERSARY].model;
        let a_trace = model.trace(&Matrix::row_vector(x_a)?)?;
        let u = a_trace.output().row(0).to_vec();
        let cached = &self.offline[i];
        let rows = cached[0].rows();
        let a_rows = Matrix::broadcast_row(&u, rows);
        let mut locals: Vec<&Matrix> = vec![&a_rows];
        locals.extend(cached.iter());
        let ct = sys.coordinator_forward(&locals)?;
        let base = output_spread(ct.output.row(0));
        let delta = self.cfg.fdm_step;
        // Σ_k |s_k − s_0| / δ differentiated through each row's output.
        let signs: Vec<f64> = (1..rows)
            .map(|k| sign(output_spread(ct.output.row(k)) - base) / delta)
            .collect();
        let mut coeff = vec![-signs.iter().sum::<f64>()];
        coeff.extend(signs);
        let mut g_out = spread_grads(&ct.output);
        for (r, c) in coeff.iter().enumerate() {
            g_out.row_mut(r).iter_mut().for_each(|v| *v *= c);
        }
        let (g_locals, _) = sys.coordinator_backward(&ct, GradAt::Output(&g_out), false)?;
        let g_u_sal = Matrix::row_vector(&g_locals[0].col_sums())?;
        // Target loss at the unperturbed benign row.
        let row0: Vec<Matrix> = cached.iter().map(|m| m.select_rows(&[0])).collect();
        let u_mat = Matrix::row_vector(&u)?;
        let mut l0: Vec<&Matrix> = vec![&u_mat];
        l0.extend(row0.iter());
        let ct0 = sys.coordinator_forward(&l0)?;
        let g_logits = cross_entropy_logit_grad(&ct0.output, &[target], 1.0);
        let (g0, _) = sys.coordinator_backward(&ct0, GradAt::Logits(&g_logits), false)?;
        let depth = model.layers().len();
        let sal = model
            .backprop(&a_trace, depth, &g_u_sal, false)?
            .input
            .into_vec();
        let loss = model
            .backprop(&a_trace, depth, &g0[0], false)?
            .input
            .into_vec();
        Ok((loss, sal))
    }

    /// Runs the synthesis loop from `x_a` towards `target`.
    pub fn generate(&self, x_a: &[f64], target: usize) -> Result<AdiCandidate> {
        let sys = self.system;
        if x_a.len() != sys.participants[ADVERSARY].columns.len() {
            return Err(Error::shape("input does not match A's columns"));
        }
        if target >= sys.classes {
            return Err(Error::invalid(format!("target {target} out of range")));
        }
        let cfg = &self.cfg;
        let d = x_a.len();
        let lr = cfg.inner_lr();
        let bound = cfg.bound.as_deref();
        let bounded = cfg.strategy == Strategy::Bounded;
        let mut v = vec![0.0; d];
        let mut prev = vec![0.0; d];
        let mut r = sys.hit_rate(self.check, x_a, target)?;
        let mut t = 0;
        while r < cfg.threshold && t < cfg.rounds {
            let i = t % self.s[0].rows();
            let mut delta = vec![0.0; d];
            let mut x = vec![0.0; d];
            for _ in 0..cfg.inner_steps {
                for j in 0..d {
                    x[j] = x_a[j] + v[j] + delta[j];
                }
                let (g_loss, g_sal) = self.grads(&x, i, target)?;
                let norm = delta.iter().map(|z| z * z).sum::<f64>().sqrt();
                for j in 0..d {
                    let mut g = cfg.alpha * g_sal[j] + cfg.beta * g_loss[j];
                    if bounded && norm > 0.0 {
                        g += cfg.gamma * delta[j] / norm;
                    }
                    delta[j] -= lr * g;
                }
                if let (true, Some(b)) = (bounded, bound) {
                    for j in 0..d {
                        delta[j] = (v[j] + delta[j]).clamp(-b[j], b[j]) - v[j];
                    }
                }
            }
            for j in 0..d {
                prev[j] = cfg.momentum * prev[j] + delta[j];
                v[j] += prev[j];
            }
            if let (true, Some(b)) = (bounded, bound) {
                for j in 0..d {
                    v[j] = v[j].clamp(-b[j], b[j]);
                }
                debug_assert!(v.iter().zip(b).all(|(x, b)| x.abs() <= *b));
            }
            if !v.iter().all(|x| x.is_finite()) {
                return Err(Error::NonFinite("synthesized perturbation"));
            }
            t += 1;
            for j in 0..d {
                x[j] = x_a[j] + v[j];
            }
            r = sys.hit_rate(self.check, &x, target)?;
        }
        Ok(AdiCandidate {
            base: x_a.to_vec(),
            perturbation: v,
            target,
            attack_accuracy: r,
            rounds: t,
            strategy: Some(cfg.strategy),
            mode: Some(cfg.mode),
            provenance: Provenance::Synthesis,
            seed: None,
        })
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}
