//! Message-level simulation of fuzzing across parties. A never sees B's
//! features: B contributes local outputs once, then only saliency scores
//! computed from the gradients the coordinator returns to it.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fuzz::{normalize_mask, scale_score, FuzzSeed, Fuzzer};
use crate::matrix::{l1_norm, Matrix};
use crate::model::ForwardTrace;
use crate::protocol::{
    predict_from_logits, GradAt, Party, PayloadKind, ProtocolMessage, ADVERSARY,
};

/// Floor on denominators of the score ratios.
const RATIO_FLOOR: f64 = 1e-12;

/// One pass over steps 3 to 10.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CooperationRound {
    pub outer: usize,
    /// Row of S whose B output the coordinator picked.
    pub index_b: usize,
    /// Noised copy with the highest A score.
    pub index_noise: usize,
    pub noised: Vec<f64>,
    pub masked: Vec<f64>,
    pub orig_acc: f64,
    pub masked_acc: f64,
    pub ratio_a: f64,
    pub ratio_b: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CooperationOutcome {
    pub messages: Vec<ProtocolMessage>,
    pub rounds: Vec<CooperationRound>,
    /// The seed's input after every accepted update.
    pub input: Vec<f64>,
    /// Whether a masked input exceeded the threshold on S.
    pub found: bool,
}

/// Results computed by the coordinator for a block of A rows paired with
/// one B row.
struct Joint {
    probs: Matrix,
    /// Gradient of each row's predicted-class probability with respect to
    /// every participant's local output.
    grads: Vec<Matrix>,
}

fn send(
    log: &mut Vec<ProtocolMessage>,
    step: u32,
    from: Party,
    to: Party,
    kind: PayloadKind,
    m: &Matrix,
) {
    log.push(ProtocolMessage::new(step, from, to, kind, m));
}

fn scalar_row(values: &[f64]) -> Matrix {
    Matrix::row_vector(values).expect("nonempty payload")
}

impl Fuzzer<'_> {
    /// Runs `outer` repetitions of the cooperation procedure for one seed,
    /// each with the configured noise trials and inner repeats, stopping
    /// once a masked input exceeds the threshold on S. The trace passes the
    /// interceptor and the privacy audit before anything is returned.
    pub fn cooperation_trace<R: Rng>(
        &self,
        seed: &FuzzSeed,
        outer: usize,
        rng: &mut R,
    ) -> Result<CooperationOutcome> {
        let cfg = self.config();
        if outer == 0 {
            return Err(Error::invalid("outer repeats must be at least 1"));
        }
        let q_a = self
            .calib
            .q99
            .first()
            .copied()
            .flatten()
            .ok_or(Error::CalibrationMissing(ADVERSARY))?;
        let sys = self.system;
        let m = sys.participant_count();
        let n = self.s_len();
        let coord = Party::Coordinator;
        let pa = Party::Participant(ADVERSARY);
        let mut log = Vec::new();

        // Step 1: benign parties send local outputs of all of S.
        let s_traces: Vec<ForwardTrace> = (1..m)
            .map(|p| sys.participants[p].model.trace(&self.s[p - 1]))
            .collect::<Result<_>>()?;
        for (i, t) in s_traces.iter().enumerate() {
            send(
                &mut log,
                1,
                Party::Participant(i + 1),
                coord,
                PayloadKind::LocalOutput,
                t.output(),
            );
        }

        let mut input = seed.input.clone();
        let mut rounds = Vec::new();
        let mut found = false;
        'outer: for o in 0..outer {
            // Step 2: β noised copies of the current input.
            let beta = cfg.noise_trials;
            let mut noised = Matrix::broadcast_row(&input, beta);
            for r in 0..beta {
                let row = noised.row_mut(r);
                self.noise(row, rng);
                self.clamp_to_bound(row, &seed.origin);
            }
            let a_trace = sys.participants[ADVERSARY].model.trace(&noised)?;
            send(
                &mut log,
                2,
                pa,
                coord,
                PayloadKind::LocalOutput,
                a_trace.output(),
            );

            for _ in 0..cfg.inner_repeats {
                // Step 3: pick a B row and return outputs and gradients.
                let j = rng.random_range(0..n);
                let joint = self.coordinate(a_trace.output(), &s_traces, j, beta)?;
                send(
                    &mut log,
                    3,
                    coord,
                    pa,
                    PayloadKind::JointPrediction,
                    &joint.probs,
                );
                for p in 1..m {
                    send(
                        &mut log,
                        3,
                        coord,
                        Party::Participant(p),
                        PayloadKind::JointPrediction,
                        &joint.probs,
                    );
                }
                for p in 0..m {
                    send(
                        &mut log,
                        3,
                        coord,
                        Party::Participant(p),
                        PayloadKind::Gradient,
                        &joint.grads[p],
                    );
                }

                // Step 4: A reports its best noised copy, B its scores.
                let a_scores =
                    self.local_scores(&a_trace, &joint.grads[ADVERSARY], ADVERSARY, q_a)?;
                let idx = argmax(&a_scores);
                let orig_a = a_scores[idx];
                send(
                    &mut log,
                    4,
                    pa,
                    coord,
                    PayloadKind::SaliencyScore,
                    &scalar_row(&[orig_a, idx as f64]),
                );
                let b_scores = self.benign_scores(&s_traces, j, &joint.grads, beta)?;
                for (p, s) in b_scores.iter().enumerate() {
                    send(
                        &mut log,
                        4,
                        Party::Participant(p + 1),
                        coord,
                        PayloadKind::SaliencyScore,
                        &scalar_row(s),
                    );
                }
                let orig_b = mean_at(&b_scores, idx);

                // Step 5: success rate of the chosen copy over S.
                let a_local = Matrix::row_vector(a_trace.output().row(idx))?;
                let orig_acc = self.s_rate(&a_local, &s_traces, seed.target)?;
                send(
                    &mut log,
                    5,
                    coord,
                    pa,
                    PayloadKind::SuccessRate,
                    &scalar_row(&[orig_acc]),
                );

                // Step 6: A masks the chosen copy with its received gradient.
                let a_input_grad = sys.participants[ADVERSARY]
                    .model
                    .input_grad(&a_trace, &joint.grads[ADVERSARY])?;
                let mask = normalize_mask(a_input_grad.row(idx));
                let mut masked = noised.row(idx).to_vec();
                for ((v, w), b) in masked.iter_mut().zip(&mask.0).zip(&self.bound) {
                    *v += cfg.alpha * w * b.sqrt();
                }
                self.clamp_to_bound(&mut masked, &seed.origin);
                let masked_trace = sys.participants[ADVERSARY]
                    .model
                    .trace(&Matrix::row_vector(&masked)?)?;
                send(
                    &mut log,
                    6,
                    pa,
                    coord,
                    PayloadKind::LocalOutput,
                    masked_trace.output(),
                );

                // Step 7: outputs, gradients and success rate of the masked input.
                let mjoint = self.coordinate(masked_trace.output(), &s_traces, j, 1)?;
                let masked_acc = self.s_rate(masked_trace.output(), &s_traces, seed.target)?;
                for p in 0..m {
                    send(
                        &mut log,
                        7,
                        coord,
                        Party::Participant(p),
                        PayloadKind::JointPrediction,
                        &mjoint.probs,
                    );
                    send(
                        &mut log,
                        7,
                        coord,
                        Party::Participant(p),
                        PayloadKind::Gradient,
                        &mjoint.grads[p],
                    );
                }
                send(
                    &mut log,
                    7,
                    coord,
                    pa,
                    PayloadKind::SuccessRate,
                    &scalar_row(&[masked_acc]),
                );

                // Step 8: scores of the masked input.
                let masked_a =
                    self.local_scores(&masked_trace, &mjoint.grads[ADVERSARY], ADVERSARY, q_a)?[0];
                send(
                    &mut log,
                    8,
                    pa,
                    coord,
                    PayloadKind::SaliencyScore,
                    &scalar_row(&[masked_a]),
                );
                let mb_scores = self.benign_scores(&s_traces, j, &mjoint.grads, 1)?;
                for (p, s) in mb_scores.iter().enumerate() {
                    send(
                        &mut log,
                        8,
                        Party::Participant(p + 1),
                        coord,
                        PayloadKind::SaliencyScore,
                        &scalar_row(s),
                    );
                }
                let masked_b = mean_at(&mb_scores, 0);

                // Step 9: score ratios.
                let ratio_a = masked_a / orig_a.max(RATIO_FLOOR);
                let ratio_b = masked_b / orig_b.max(RATIO_FLOOR);
                send(
                    &mut log,
                    9,
                    coord,
                    pa,
                    PayloadKind::Ratio,
                    &scalar_row(&[ratio_a, ratio_b]),
                );

                // Step 10: A keeps the masked input if it helps.
                let accepted = masked_acc > orig_acc && ratio_a > ratio_b;
                if accepted {
                    input = masked.clone();
                }
                let hit = accepted && masked_acc > cfg.report_threshold();
                send(
                    &mut log,
                    10,
                    pa,
                    coord,
                    PayloadKind::Selection,
                    &scalar_row(&[f64::from(u8::from(accepted)), f64::from(u8::from(hit))]),
                );
                rounds.push(CooperationRound {
                    outer: o,
                    index_b: j,
                    index_noise: idx,
                    noised: noised.row(idx).to_vec(),
                    masked,
                    orig_acc,
                    masked_acc,
                    ratio_a,
                    ratio_b,
                    accepted,
                });
                if hit {
                    found = true;
                    break 'outer;
                }
            }
        }
        self.audit(&mut log)?;
        Ok(CooperationOutcome {
            messages: log,
            rounds,
            input,
            found,
        })
    }

    /// Coordinator pass for `rows` A outputs paired with row `j` of every
    /// benign participant's cached outputs.
    fn coordinate(
        &self,
        a_out: &Matrix,
        s_traces: &[ForwardTrace],
        j: usize,
        rows: usize,
    ) -> Result<Joint> {
        let b_rows: Vec<Matrix> = s_traces
            .iter()
            .map(|t| Matrix::broadcast_row(t.output().row(j), rows))
            .collect();
        let mut locals = vec![a_out];
        locals.extend(b_rows.iter());
        let ct = self.system.coordinator_forward(&locals)?;
        let preds = predict_from_logits(&ct.logits);
        let cols = ct.output.cols();
        let mut g = Matrix::zeros(rows, cols);
        for (r, &c) in preds.iter().enumerate() {
            if cols == 1 {
                g.set(r, 0, if c == 1 { 1.0 } else { -1.0 });
            } else {
                g.set(r, c, 1.0);
            }
        }
        let (grads, _) = self
            .system
            .coordinator_backward(&ct, GradAt::Output(&g), false)?;
        let probs = self.system.expand_probabilities(&ct.output);
        Ok(Joint { probs, grads })
    }

    /// Scores a participant computes from its own trace and the local
    /// output gradient it received.
    fn local_scores(
        &self,
        trace: &ForwardTrace,
        grad: &Matrix,
        participant: usize,
        q: f64,
    ) -> Result<Vec<f64>> {
        let g = self.system.participants[participant]
            .model
            .input_grad(trace, grad)?;
        Ok(g.iter_rows().map(|r| scale_score(l1_norm(r), q)).collect())
    }

    /// Each benign participant's scores for row `j` of S under `rows`
    /// received gradients.
    fn benign_scores(
        &self,
        s_traces: &[ForwardTrace],
        j: usize,
        grads: &[Matrix],
        rows: usize,
    ) -> Result<Vec<Vec<f64>>> {
        (1..self.system.participant_count())
            .map(|p| {
                let x = Matrix::broadcast_row(self.s[p - 1].row(j), rows);
                let t = self.system.participants[p].model.trace(&x)?;
                debug_assert_eq!(t.output().row(0), s_traces[p - 1].output().row(j));
                let q = self.calib.q99[p].expect("checked at construction");
                self.local_scores(&t, &grads[p], p, q)
            })
            .collect()
    }

    /// Fraction of S on which A's local output `a_local` yields `target`.
    fn s_rate(&self, a_local: &Matrix, s_traces: &[ForwardTrace], target: usize) -> Result<f64> {
        let n = self.s_len();
        let a = Matrix::broadcast_row(a_local.row(0), n);
        let mut locals = vec![&a];
        locals.extend(s_traces.iter().map(|t| t.output()));
        let ct = self.system.coordinator_forward(&locals)?;
        let hits = predict_from_logits(&ct.logits)
            .iter()
            .filter(|&&c| c == target)
            .count();
        Ok(hits as f64 / n as f64)
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

fn mean_at(scores: &[Vec<f64>], idx: usize) -> f64 {
    scores.iter().map(|s| s[idx]).sum::<f64>() / scores.len() as f64
}
