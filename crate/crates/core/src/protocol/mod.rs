//! Simulated VFL system: participants run local models on their own columns
//! and a coordinator combines the local outputs into a joint prediction.

mod cache;
mod checkpoint;
mod metrics;
mod trace;
mod train;

pub use cache::BenignCache;
pub use checkpoint::{SystemCheckpoint, SYSTEM_CHECKPOINT_VERSION};
pub use metrics::{auc_roc, evaluate, Metrics};
pub use trace::{
    privacy_audit, read_jsonl, run_with_trace, steps, write_jsonl, Party, PayloadKind,
    ProtocolMessage,
};
pub use train::{
    train_heterolr, train_heterolr_style, train_splitnn, ModelSpec, SplitArchitecture, TrainConfig,
    TrainOutcome,
};

use serde::{Deserialize, Serialize};

use crate::data::PartitionSpec;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::model::{ForwardTrace, Gradients, Layer, LayerKind, LocalModel, ParamGrads};

/// Index of the adversarial participant A.
pub const ADVERSARY: usize = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProtocolKind {
    HeteroLR,
    SplitNN,
}

/// A data holder with its feature columns and local model.
#[derive(Debug, Clone, PartialEq)]
pub struct Participant {
    pub id: usize,
    pub columns: Vec<usize>,
    pub model: LocalModel,
}

impl Participant {
    pub fn new(id: usize, columns: Vec<usize>, model: LocalModel) -> Result<Self> {
        if model.input_dim() != columns.len() {
            return Err(Error::shape(format!(
                "participant {id} holds {} columns but its model expects {}",
                columns.len(),
                model.input_dim()
            )));
        }
        Ok(Self { id, columns, model })
    }

    pub fn local_output(&self, x: &Matrix) -> Result<Matrix> {
        self.model.predict(x)
    }
}

/// Output activation applied by a HeteroLR coordinator to the summed scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Head {
    Sigmoid,
    Softmax,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Coordinator {
    /// HeteroLR: `head(Σ_p local_p)`.
    Aggregate(Head),
    /// SplitNN: a top model over the concatenated local outputs. Its last
    /// layer is a sigmoid or softmax.
    Top(LocalModel),
}

/// Participants (index 0 is the adversary A) plus the coordinator.
#[derive(Debug, Clone, PartialEq)]
pub struct VFLSystem {
    pub protocol: ProtocolKind,
    pub participants: Vec<Participant>,
    pub coordinator: Coordinator,
    pub classes: usize,
}

/// Activations of one joint forward pass.
#[derive(Debug, Clone)]
pub struct JointTrace {
    pub locals: Vec<ForwardTrace>,
    pub coordinator: CoordinatorTrace,
}

impl JointTrace {
    pub fn output(&self) -> &Matrix {
        &self.coordinator.output
    }

    pub fn logits(&self) -> &Matrix {
        &self.coordinator.logits
    }
}

/// Coordinator activations computed from local outputs.
#[derive(Debug, Clone)]
pub struct CoordinatorTrace {
    widths: Vec<usize>,
    top: Option<ForwardTrace>,
    pub logits: Matrix,
    pub output: Matrix,
}

/// Where a backward pass starts.
#[derive(Debug, Clone, Copy)]
pub enum GradAt<'a> {
    /// Gradient with respect to pre-activation scores.
    Logits(&'a Matrix),
    /// Gradient with respect to the coordinator's output probabilities.
    Output(&'a Matrix),
}

/// Gradients for every party of a joint pass.
#[derive(Debug, Clone)]
pub struct JointGrads {
    pub locals: Vec<Gradients>,
    pub top: Option<ParamGrads>,
}

impl VFLSystem {
    pub fn new(
        protocol: ProtocolKind,
        participants: Vec<Participant>,
        coordinator: Coordinator,
        classes: usize,
    ) -> Result<Self> {
        if participants.is_empty() {
            return Err(Error::invalid("a system needs at least one participant"));
        }
        if classes < 2 {
            return Err(Error::invalid("a system needs at least two classes"));
        }
        let d: usize = participants.iter().map(|p| p.columns.len()).sum();
        PartitionSpec::new(participants.iter().map(|p| p.columns.clone()).collect(), d)?;
        let out_dims: Vec<usize> = participants.iter().map(|p| p.model.output_dim()).collect();
        let expected_out = if classes == 2 {
            1..=2
        } else {
            classes..=classes
        };
        match (&coordinator, protocol) {
            (Coordinator::Aggregate(head), ProtocolKind::HeteroLR) => {
                let k = out_dims[0];
                if out_dims.iter().any(|&o| o != k) {
                    return Err(Error::shape(
                        "HeteroLR participants must emit equal score widths",
                    ));
                }
                let ok = match head {
                    Head::Sigmoid => k == 1 && classes == 2,
                    Head::Softmax => k == classes,
                };
                if !ok {
                    return Err(Error::shape(format!(
                        "{head:?} head cannot produce {classes} classes from width {k}"
                    )));
                }
            }
            (Coordinator::Top(top), ProtocolKind::SplitNN) => {
                let total: usize = out_dims.iter().sum();
                if top.input_dim() != total {
                    return Err(Error::shape(format!(
                        "top model expects {} inputs, participants emit {total}",
                        top.input_dim()
                    )));
                }
                if !matches!(
                    top.output_activation(),
                    Some(LayerKind::Sigmoid | LayerKind::Softmax)
                ) {
                    return Err(Error::invalid("top model must end in sigmoid or softmax"));
                }
                if !expected_out.contains(&top.output_dim()) {
                    return Err(Error::shape(
                        "top model output width does not match class count",
                    ));
                }
                if top.output_dim() == 1 && top.output_activation() != Some(LayerKind::Sigmoid) {
                    return Err(Error::invalid("single-output top model must use sigmoid"));
                }
            }
            _ => return Err(Error::invalid("coordinator does not match protocol kind")),
        }
        Ok(Self {
            protocol,
            participants,
            coordinator,
            classes,
        })
    }

    pub fn partition(&self) -> PartitionSpec {
        let parts = self
            .participants
            .iter()
            .map(|p| p.columns.clone())
            .collect();
        let d = self.participants.iter().map(|p| p.columns.len()).sum();
        PartitionSpec::new(parts, d).expect("validated at construction")
    }

    pub fn participant_count(&self) -> usize {
        self.participants.len()
    }

    /// Width of the coordinator output (1 for a sigmoid head).
    pub fn output_dim(&self) -> usize {
        match &self.coordinator {
            Coordinator::Aggregate(Head::Sigmoid) => 1,
            Coordinator::Aggregate(Head::Softmax) => self.classes,
            Coordinator::Top(top) => top.output_dim(),
        }
    }

    fn check_inputs(&self, inputs: &[&Matrix]) -> Result<usize> {
        if inputs.len() != self.participants.len() {
            return Err(Error::shape(format!(
                "{} inputs for {} participants",
                inputs.len(),
                self.participants.len()
            )));
        }
        let n = inputs[0].rows();
        for (p, x) in self.participants.iter().zip(inputs) {
            if x.rows() != n {
                return Err(Error::shape("participant inputs have different row counts"));
            }
            if x.cols() != p.columns.len() {
                return Err(Error::shape(format!(
                    "participant {} input has {} columns, expected {}",
                    p.id,
                    x.cols(),
                    p.columns.len()
                )));
            }
        }
        Ok(n)
    }

    /// Coordinator output for aligned participant rows.
    pub fn joint_inference(&self, inputs: &[&Matrix]) -> Result<Matrix> {
        Ok(self.trace(inputs)?.coordinator.output)
    }

    /// Class probabilities, expanding a sigmoid output p to [1 − p, p].
    pub fn class_probabilities(&self, inputs: &[&Matrix]) -> Result<Matrix> {
        Ok(self.expand_probabilities(&self.joint_inference(inputs)?))
    }

    pub(crate) fn expand_probabilities(&self, output: &Matrix) -> Matrix {
        if output.cols() != 1 {
            return output.clone();
        }
        let data = output
            .as_slice()
            .iter()
            .flat_map(|&p| [1.0 - p, p])
            .collect();
        Matrix::from_vec_unchecked(output.rows(), 2, data)
    }

    pub fn predict(&self, inputs: &[&Matrix]) -> Result<Vec<usize>> {
        Ok(predict_from_logits(&self.trace(inputs)?.coordinator.logits))
    }

    pub fn trace(&self, inputs: &[&Matrix]) -> Result<JointTrace> {
        self.check_inputs(inputs)?;
        let locals = self
            .participants
            .iter()
            .zip(inputs)
            .map(|(p, x)| p.model.trace(x))
            .collect::<Result<Vec<_>>>()?;
        let outs: Vec<&Matrix> = locals.iter().map(ForwardTrace::output).collect();
        let coordinator = self.coordinator_forward(&outs)?;
        Ok(JointTrace {
            locals,
            coordinator,
        })
    }

    /// Coordinator pass from local outputs alone.
    pub fn coordinator_forward(&self, locals: &[&Matrix]) -> Result<CoordinatorTrace> {
        if locals.len() != self.participants.len() {
            return Err(Error::shape("one local output per participant required"));
        }
        let widths: Vec<usize> = locals.iter().map(|m| m.cols()).collect();
        for (p, w) in self.participants.iter().zip(&widths) {
            if *w != p.model.output_dim() {
                return Err(Error::shape(
                    "local output width does not match participant model",
                ));
            }
        }
        match &self.coordinator {
            Coordinator::Aggregate(head) => {
                let mut logits = locals[0].clone();
                for m in &locals[1..] {
                    logits.add_assign(m)?;
                }
                let output = head_layer(*head, logits.cols()).forward(&logits);
                Ok(CoordinatorTrace {
                    widths,
                    top: None,
                    logits,
                    output,
                })
            }
            Coordinator::Top(top) => {
                let joined = Matrix::hconcat(locals)?;
                let trace = top.trace(&joined)?;
                let logits = trace.layer_output(top.logit_depth() - 1).clone();
                let output = trace.output().clone();
                Ok(CoordinatorTrace {
                    widths,
                    top: Some(trace),
                    logits,
                    output,
                })
            }
        }
    }

    /// Gradients with respect to each participant's local output and, for a
    /// top model, its parameters.
    pub fn coordinator_backward(
        &self,
        trace: &CoordinatorTrace,
        grad: GradAt<'_>,
        need_params: bool,
    ) -> Result<(Vec<Matrix>, Option<ParamGrads>)> {
        let g_logits = match grad {
            GradAt::Logits(g) => {
                if g.shape() != trace.logits.shape() {
                    return Err(Error::shape("logit gradient shape mismatch"));
                }
                g.clone()
            }
            GradAt::Output(g) => {
                if g.shape() != trace.output.shape() {
                    return Err(Error::shape("output gradient shape mismatch"));
                }
                let head = match &self.coordinator {
                    Coordinator::Aggregate(h) => *h,
                    Coordinator::Top(top) => match top.output_activation() {
                        Some(LayerKind::Sigmoid) => Head::Sigmoid,
                        _ => Head::Softmax,
                    },
                };
                head_layer(head, g.cols())
                    .backward(&trace.logits, &trace.output, g, false)
                    .0
            }
        };
        match &self.coordinator {
            Coordinator::Aggregate(_) => Ok((vec![g_logits; trace.widths.len()], None)),
            Coordinator::Top(top) => {
                let t = trace.top.as_ref().expect("top trace present");
                let grads = top.backprop(t, top.logit_depth(), &g_logits, need_params)?;
                let parts = grads.input.hsplit(&trace.widths)?;
                Ok((parts, need_params.then_some(grads.params)))
            }
        }
    }

    /// Full backward pass through the coordinator and every local model.
    pub fn backward(
        &self,
        trace: &JointTrace,
        grad: GradAt<'_>,
        need_params: bool,
    ) -> Result<JointGrads> {
        let (local_grads, top) =
            self.coordinator_backward(&trace.coordinator, grad, need_params)?;
        let locals = self
            .participants
            .iter()
            .zip(&trace.locals)
            .zip(&local_grads)
            .map(|((p, t), g)| p.model.backprop(t, p.model.layers().len(), g, need_params))
            .collect::<Result<Vec<_>>>()?;
        Ok(JointGrads { locals, top })
    }

    /// Per-participant input gradients of each row's `classes[r]` score,
    /// taken at the logits or at the output probabilities. A single sigmoid
    /// column counts as the score of class 1, negated for class 0.
    pub fn class_input_grads(
        &self,
        inputs: &[&Matrix],
        classes: &[usize],
        at_logits: bool,
    ) -> Result<Vec<Matrix>> {
        let trace = self.trace(inputs)?;
        let n = trace.output().rows();
        if classes.len() != n {
            return Err(Error::shape("one class per row required"));
        }
        let cols = trace.output().cols();
        let mut g = Matrix::zeros(n, cols);
        for (r, &c) in classes.iter().enumerate() {
            if c >= self.classes {
                return Err(Error::invalid(format!("class {c} out of range")));
            }
            if cols == 1 {
                g.set(r, 0, if c == 1 { 1.0 } else { -1.0 });
            } else {
                g.set(r, c, 1.0);
            }
        }
        let at = if at_logits {
            GradAt::Logits(&g)
        } else {
            GradAt::Output(&g)
        };
        Ok(self
            .backward(&trace, at, false)?
            .locals
            .into_iter()
            .map(|l| l.input)
            .collect())
    }

    /// Column views of `x` for each participant.
    pub fn split_features(&self, x: &Matrix) -> Result<Vec<Matrix>> {
        crate::data::partition_vertical(x, &self.partition())
    }
}

pub(crate) fn head_layer(head: Head, dim: usize) -> Layer {
    match head {
        Head::Sigmoid => Layer::Sigmoid { dim },
        Head::Softmax => Layer::Softmax { dim },
    }
}

/// Class index per row: argmax for multi-column logits, `z >= 0` for one.
pub fn predict_from_logits(logits: &Matrix) -> Vec<usize> {
    logits.iter_rows().map(class_of).collect()
}

pub(crate) fn class_of(row: &[f64]) -> usize {
    if row.len() == 1 {
        return usize::from(row[0] >= 0.0);
    }
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Gradient of the mean cross-entropy with respect to logits.
pub(crate) fn cross_entropy_logit_grad(output: &Matrix, labels: &[usize], scale: f64) -> Matrix {
    let mut g = output.clone();
    let cols = g.cols();
    for (r, &l) in labels.iter().enumerate() {
        let row = g.row_mut(r);
        if cols == 1 {
            row[0] -= l as f64;
        } else {
            row[l] -= 1.0;
        }
        row.iter_mut().for_each(|v| *v *= scale);
    }
    g
}

/// Mean cross-entropy of coordinator outputs against labels.
pub(crate) fn cross_entropy(output: &Matrix, labels: &[usize]) -> f64 {
    const TINY: f64 = 1e-15;
    let total: f64 = output
        .iter_rows()
        .zip(labels)
        .map(|(row, &l)| {
            let p = if row.len() == 1 {
                if l == 1 {
                    row[0]
                } else {
                    1.0 - row[0]
                }
            } else {
                row[l]
            };
            -p.max(TINY).ln()
        })
        .sum();
    total / labels.len().max(1) as f64
}
