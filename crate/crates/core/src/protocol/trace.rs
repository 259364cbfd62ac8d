//! Plaintext message log of a joint run and the privacy audit over it.
//!
//! Encryption is not simulated; instead every payload records its kind and
//! the audit checks that no benign participant's raw features leave it.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::protocol::VFLSystem;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Party {
    Participant(usize),
    Coordinator,
    Broadcast,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PayloadKind {
    LocalOutput,
    JointPrediction,
    /// Gradient with respect to a participant's local output.
    Gradient,
    SaliencyScore,
    /// Fraction of benign rows on which a candidate yields its target.
    SuccessRate,
    Selection,
    Ratio,
    RawFeatures,
}

/// Protocol step numbers used in traces.
pub mod steps {
    /// Participants send local outputs to the coordinator.
    pub const LOCAL_OUTPUT: u32 = 4;
    /// Coordinator combines the local outputs.
    pub const AGGREGATE: u32 = 5;
    /// Coordinator returns the joint prediction.
    pub const RESULT: u32 = 6;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolMessage {
    pub step: u32,
    pub sender: Party,
    pub receiver: Party,
    pub kind: PayloadKind,
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

impl ProtocolMessage {
    pub fn new(
        step: u32,
        sender: Party,
        receiver: Party,
        kind: PayloadKind,
        payload: &Matrix,
    ) -> Self {
        Self {
            step,
            sender,
            receiver,
            kind,
            rows: payload.rows(),
            cols: payload.cols(),
            values: payload.as_slice().to_vec(),
        }
    }

    pub fn size(&self) -> usize {
        self.values.len()
    }
}

/// Joint inference that also returns the messages exchanged: one local
/// output per participant to the coordinator, then one result broadcast.
/// The coordinator's combination step itself sends nothing.
pub fn run_with_trace(
    system: &VFLSystem,
    inputs: &[&Matrix],
) -> Result<(Matrix, Vec<ProtocolMessage>)> {
    let trace = system.trace(inputs)?;
    let mut messages: Vec<ProtocolMessage> = trace
        .locals
        .iter()
        .enumerate()
        .map(|(p, t)| {
            ProtocolMessage::new(
                steps::LOCAL_OUTPUT,
                Party::Participant(p),
                Party::Coordinator,
                PayloadKind::LocalOutput,
                t.output(),
            )
        })
        .collect();
    let probs = system.expand_probabilities(trace.output());
    messages.push(ProtocolMessage::new(
        steps::RESULT,
        Party::Coordinator,
        Party::Broadcast,
        PayloadKind::JointPrediction,
        &probs,
    ));
    Ok((probs, messages))
}

/// Fails on the first message carrying raw features of a participant other
/// than `adversary` to any other party.
pub fn privacy_audit(messages: &[ProtocolMessage], adversary: usize) -> Result<()> {
    for (i, m) in messages.iter().enumerate() {
        if m.kind != PayloadKind::RawFeatures {
            continue;
        }
        match m.sender {
            Party::Participant(p) if p == adversary => {}
            Party::Participant(p) if m.receiver == Party::Participant(p) => {}
            sender => {
                return Err(Error::PrivacyViolation(format!(
                    "message {i} (step {}) carries raw features from {sender:?} to {:?}",
                    m.step, m.receiver
                )))
            }
        }
    }
    Ok(())
}

pub fn write_jsonl(path: &Path, messages: &[ProtocolMessage]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for m in messages {
        serde_json::to_writer(&mut w, m)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_jsonl(path: &Path) -> Result<Vec<ProtocolMessage>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::data(path, format!("line {}: {e}", n + 1)))?,
        );
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{LayerKind, LocalModel};
    use crate::protocol::{Coordinator, Participant, ProtocolKind};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn system() -> VFLSystem {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = Participant::new(
            0,
            vec![0, 1],
            LocalModel::mlp(&[2, 3, 2], None, &mut rng).unwrap(),
        )
        .unwrap();
        let b = Participant::new(
            1,
            vec![2],
            LocalModel::mlp(&[1, 3, 2], None, &mut rng).unwrap(),
        )
        .unwrap();
        let top = LocalModel::mlp(&[4, 3, 2], Some(LayerKind::Softmax), &mut rng).unwrap();
        VFLSystem::new(ProtocolKind::SplitNN, vec![a, b], Coordinator::Top(top), 2).unwrap()
    }

    #[test]
    fn two_party_trace_shape() {
        let sys = system();
        let xa = Matrix::zeros(3, 2);
        let xb = Matrix::zeros(3, 1);
        let (probs, msgs) = run_with_trace(&sys, &[&xa, &xb]).unwrap();
        assert_eq!(probs, sys.joint_inference(&[&xa, &xb]).unwrap());
        assert_eq!(msgs.len(), 3);
        assert!(msgs[..2]
            .iter()
            .all(|m| m.receiver == Party::Coordinator && m.kind == PayloadKind::LocalOutput));
        assert_eq!(msgs[2].receiver, Party::Broadcast);
        privacy_audit(&msgs, 0).unwrap();
    }

    #[test]
    fn injected_raw_features_are_reported() {
        let sys = system();
        let xa = Matrix::zeros(1, 2);
        let xb = Matrix::from_rows(&[vec![0.7]]).unwrap();
        let (_, mut msgs) = run_with_trace(&sys, &[&xa, &xb]).unwrap();
        msgs.push(ProtocolMessage::new(
            5,
            Party::Participant(1),
            Party::Coordinator,
            PayloadKind::RawFeatures,
            &xb,
        ));
        assert!(matches!(
            privacy_audit(&msgs, 0),
            Err(Error::PrivacyViolation(_))
        ));
        // The adversary exposing its own features is not a leak.
        let own = ProtocolMessage::new(
            5,
            Party::Participant(0),
            Party::Coordinator,
            PayloadKind::RawFeatures,
            &xa,
        );
        privacy_audit(&[own], 0).unwrap();
    }

    #[test]
    fn jsonl_roundtrip() {
        let sys = system();
        let xa = Matrix::from_rows(&[vec![0.1, -0.3]]).unwrap();
        let xb = Matrix::from_rows(&[vec![1.0 / 3.0]]).unwrap();
        let (_, msgs) = run_with_trace(&sys, &[&xa, &xb]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.jsonl");
        write_jsonl(&path, &msgs).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), msgs.len());
        assert_eq!(read_jsonl(&path).unwrap(), msgs);
    }
}
