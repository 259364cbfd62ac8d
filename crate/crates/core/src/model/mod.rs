//! Fixed-vocabulary feed-forward models with gradients for parameters and inputs.

mod checkpoint;
mod gradcheck;
mod optim;

pub use checkpoint::{LayerRecord, ModelCheckpoint, CHECKPOINT_VERSION};
pub use gradcheck::{grad_check, GradCheckReport};
pub use optim::{sgd_step, Sgd};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{axpy, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Linear,
    Relu,
    Sigmoid,
    Softmax,
}

/// One layer. Linear weights are stored `out_dim × in_dim`.
#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Linear { weights: Matrix, bias: Vec<f64> },
    Relu { dim: usize },
    Sigmoid { dim: usize },
    Softmax { dim: usize },
}

impl Layer {
    pub fn linear(weights: Matrix, bias: Vec<f64>) -> Result<Self> {
        if bias.len() != weights.rows() {
            return Err(Error::shape(format!(
                "bias length {} does not match {} output units",
                bias.len(),
                weights.rows()
            )));
        }
        if bias.iter().any(|b| !b.is_finite()) {
            return Err(Error::NonFinite("bias"));
        }
        Ok(Layer::Linear { weights, bias })
    }

    /// Glorot-uniform weights in ±√(6/(in+out)), zero bias.
    pub fn linear_init<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let data = (0..in_dim * out_dim)
            .map(|_| rng.random_range(-limit..=limit))
            .collect();
        Layer::Linear {
            weights: Matrix::from_vec_unchecked(out_dim, in_dim, data),
            bias: vec![0.0; out_dim],
        }
    }

    pub fn activation(kind: LayerKind, dim: usize) -> Result<Self> {
        match kind {
            LayerKind::Relu => Ok(Layer::Relu { dim }),
            LayerKind::Sigmoid => Ok(Layer::Sigmoid { dim }),
            LayerKind::Softmax => Ok(Layer::Softmax { dim }),
            LayerKind::Linear => Err(Error::invalid("linear is not an activation")),
        }
    }

    pub fn kind(&self) -> LayerKind {
        match self {
            Layer::Linear { .. } => LayerKind::Linear,
            Layer::Relu { .. } => LayerKind::Relu,
            Layer::Sigmoid { .. } => LayerKind::Sigmoid,
            Layer::Softmax { .. } => LayerKind::Softmax,
        }
    }

    pub fn in_dim(&self) -> usize {
        match self {
            Layer::Linear { weights, .. } => weights.cols(),
            Layer::Relu { dim } | Layer::Sigmoid { dim } | Layer::Softmax { dim } => *dim,
        }
    }

    pub fn out_dim(&self) -> usize {
        match self {
            Layer::Linear { weights, .. } => weights.rows(),
            Layer::Relu { dim } | Layer::Sigmoid { dim } | Layer::Softmax { dim } => *dim,
        }
    }

    pub fn forward(&self, input: &Matrix) -> Matrix {
        match self {
            Layer::Linear { weights, bias } => {
                let mut out = input
                    .matmul_t(weights)
                    .expect("layer dims validated at model construction");
                let cols = out.cols();
                for r in 0..out.rows() {
                    axpy(1.0, bias, &mut out.as_mut_slice()[r * cols..(r + 1) * cols]);
                }
                out
            }
            Layer::Relu { .. } => input.map(|v| v.max(0.0)),
            Layer::Sigmoid { .. } => input.map(sigmoid),
            Layer::Softmax { .. } => {
                let mut out = input.clone();
                for r in 0..out.rows() {
                    softmax_in_place(out.row_mut(r));
                }
                out
            }
        }
    }

    /// Returns (input gradient, parameter gradient) for one layer.
    pub(crate) fn backward(
        &self,
        input: &Matrix,
        output: &Matrix,
        grad: &Matrix,
        need_params: bool,
    ) -> (Matrix, Option<LayerGrad>) {
        match self {
            Layer::Linear { weights, .. } => {
                let input_grad = grad.matmul(weights).expect("shape checked");
                let params = need_params.then(|| LayerGrad {
                    weights: grad.t_matmul(input).expect("shape checked"),
                    bias: grad.col_sums(),
                });
                (input_grad, params)
            }
            Layer::Relu { .. } => (
                grad.zip_map(input, |g, x| if x > 0.0 { g } else { 0.0 })
                    .expect("shape checked"),
                None,
            ),
            Layer::Sigmoid { .. } => (
                grad.zip_map(output, |g, y| g * y * (1.0 - y))
                    .expect("shape checked"),
                None,
            ),
            Layer::Softmax { .. } => {
                let mut out = grad.clone();
                for r in 0..out.rows() {
                    let y = output.row(r);
                    let g = grad.row(r);
                    let s: f64 = y.iter().zip(g).map(|(a, b)| a * b).sum();
                    for (o, (&yi, &gi)) in out.row_mut(r).iter_mut().zip(y.iter().zip(g)) {
                        *o = yi * (gi - s);
                    }
                }
                (out, None)
            }
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Gradient of one linear layer's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

/// Per-layer parameter gradients; `None` for parameter-free layers.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads(pub Vec<Option<LayerGrad>>);

impl ParamGrads {
    pub fn zeros_like(model: &LocalModel) -> Self {
        ParamGrads(
            model
                .layers
                .iter()
                .map(|l| match l {
                    Layer::Linear { weights, bias } => Some(LayerGrad {
                        weights: Matrix::zeros(weights.rows(), weights.cols()),
                        bias: vec![0.0; bias.len()],
                    }),
                    _ => None,
                })
                .collect(),
        )
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.0.iter_mut().flatten() {
            g.weights
                .as_mut_slice()
                .iter_mut()
                .for_each(|v| *v *= factor);
            g.bias.iter_mut().for_each(|v| *v *= factor);
        }
    }
}

/// Per-layer activations from one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    inputs: Vec<Matrix>,
    output: Matrix,
}

impl ForwardTrace {
    /// Number of layers recorded.
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn layer_input(&self, i: usize) -> &Matrix {
        &self.inputs[i]
    }

    pub fn layer_output(&self, i: usize) -> &Matrix {
        self.inputs.get(i + 1).unwrap_or(&self.output)
    }

    pub fn input(&self) -> &Matrix {
        &self.inputs[0]
    }

    pub fn output(&self) -> &Matrix {
        &self.output
    }
}

/// Result of a backward pass.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub params: ParamGrads,
    pub input: Matrix,
}

/// An ordered stack of layers with matching adjacent dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalModel {
    layers: Vec<Layer>,
}

impl LocalModel {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("a model needs at least one layer"));
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::shape(format!(
                    "layer output {} does not feed layer input {}",
                    pair[0].out_dim(),
                    pair[1].in_dim()
                )));
            }
        }
        Ok(Self { layers })
    }

    /// Linear layers of the given widths with ReLU between them and an
    /// optional final activation.
    pub fn mlp<R: Rng + ?Sized>(
        widths: &[usize],
        final_activation: Option<LayerKind>,
        rng: &mut R,
    ) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::invalid("mlp needs input and output widths"));
        }
        let mut layers = Vec::new();
        for (i, pair) in widths.windows(2).enumerate() {
            layers.push(Layer::linear_init(pair[0], pair[1], rng));
            if i + 2 < widths.len() {
                layers.push(Layer::Relu { dim: pair[1] });
            }
        }
        if let Some(kind) = final_activation {
            layers.push(Layer::activation(kind, widths[widths.len() - 1])?);
        }
        Self::new(layers)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| match l {
                Layer::Linear { weights, bias } => weights.rows() * weights.cols() + bias.len(),
                _ => 0,
            })
            .sum()
    }

    /// Kind of the last layer when it is an output activation.
    pub fn output_activation(&self) -> Option<LayerKind> {
        match self.layers.last()?.kind() {
            LayerKind::Linear | LayerKind::Relu => None,
            k => Some(k),
        }
    }

    pub fn forward(&self, input: &Matrix) -> Result<(Matrix, ForwardTrace)> {
        let trace = self.trace(input)?;
        Ok((trace.output.clone(), trace))
    }

    pub fn trace(&self, input: &Matrix) -> Result<ForwardTrace> {
        if input.cols() != self.input_dim() {
            return Err(Error::shape(format!(
                "input has {} columns, model expects {}",
                input.cols(),
                self.input_dim()
            )));
        }
        if !input.all_finite() {
            return Err(Error::NonFinite("model input"));
        }
        Ok(self.trace_unchecked(input))
    }

    pub(crate) fn trace_unchecked(&self, input: &Matrix) -> ForwardTrace {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut current = input.clone();
        for layer in &self.layers {
            let next = layer.forward(&current);
            inputs.push(current);
            current = next;
        }
        ForwardTrace {
            inputs,
            output: current,
        }
    }

    pub fn predict(&self, input: &Matrix) -> Result<Matrix> {
        Ok(self.trace(input)?.output)
    }

    pub fn backward(&self, trace: &ForwardTrace, output_grad: &Matrix) -> Result<Gradients> {
        self.backprop(trace, self.layers.len(), output_grad, true)
    }

    /// Input gradient only; skips parameter gradients.
    pub fn input_grad(&self, trace: &ForwardTrace, output_grad: &Matrix) -> Result<Matrix> {
        Ok(self
            .backprop(trace, self.layers.len(), output_grad, false)?
            .input)
    }

    /// Backward pass through `layers[..upto]` starting from the gradient with
    /// respect to the output of layer `upto - 1`.
    pub fn backprop(
        &self,
        trace: &ForwardTrace,
        upto: usize,
        grad: &Matrix,
        need_params: bool,
    ) -> Result<Gradients> {
        if trace.len() != self.layers.len() || upto == 0 || upto > self.layers.len() {
            return Err(Error::shape("trace does not belong to this model"));
        }
        let expected = trace.layer_output(upto - 1).shape();
        if grad.shape() != expected {
            return Err(Error::shape(format!(
                "gradient shape {:?} does not match activation shape {:?}",
                grad.shape(),
                expected
            )));
        }
        let mut params: Vec<Option<LayerGrad>> = vec![None; self.layers.len()];
        let mut g = grad.clone();
        for i in (0..upto).rev() {
            let (next, pg) = self.layers[i].backward(
                trace.layer_input(i),
                trace.layer_output(i),
                &g,
                need_params,
            );
            params[i] = pg;
            g = next;
        }
        if need_params {
            for (i, layer) in self.layers.iter().enumerate().skip(upto) {
                if let Layer::Linear { weights, bias } = layer {
                    params[i] = Some(LayerGrad {
                        weights: Matrix::zeros(weights.rows(), weights.cols()),
                        bias: vec![0.0; bias.len()],
                    });
                }
            }
        }
        Ok(Gradients {
            params: ParamGrads(params),
            input: g,
        })
    }

    /// Index one past the last layer that produces logits: the model length
    /// minus a trailing sigmoid/softmax.
    pub fn logit_depth(&self) -> usize {
        match self.output_activation() {
            Some(_) => self.layers.len() - 1,
            None => self.layers.len(),
        }
    }

    pub(crate) fn check_grads(&self, grads: &ParamGrads) -> Result<()> {
        if grads.0.len() != self.layers.len() {
            return Err(Error::shape("gradient layer count differs from model"));
        }
        for (layer, g) in self.layers.iter().zip(&grads.0) {
            match (layer, g) {
                (Layer::Linear { weights, bias }, Some(g)) => {
                    if g.weights.shape() != weights.shape() || g.bias.len() != bias.len() {
                        return Err(Error::shape("parameter gradient shape mismatch"));
                    }
                }
                (Layer::Linear { .. }, None) => {
                    return Err(Error::shape("missing gradient for linear layer"))
                }
                (_, Some(_)) => return Err(Error::shape("gradient for parameter-free layer")),
                (_, None) => {}
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn central_input_grad(model: &LocalModel, x: &Matrix, coeff: &Matrix, h: f64) -> Matrix {
        let objective = |m: &Matrix| -> f64 {
            let y = model.predict(m).unwrap();
            y.as_slice()
                .iter()
                .zip(coeff.as_slice())
                .map(|(a, b)| a * b)
                .sum()
        };
        let mut out = Matrix::zeros(x.rows(), x.cols());
        for i in 0..x.as_slice().len() {
            let mut plus = x.clone();
            plus.as_mut_slice()[i] += h;
            let mut minus = x.clone();
            minus.as_mut_slice()[i] -= h;
            out.as_mut_slice()[i] = (objective(&plus) - objective(&minus)) / (2.0 * h);
        }
        out
    }

    #[test]
    fn identity_linear_is_identity() {
        let model = LocalModel::new(vec![
            Layer::linear(Matrix::identity(3), vec![0.0; 3]).unwrap()
        ])
        .unwrap();
        let x = Matrix::from_rows(&[vec![1.5, -2.0, 0.25]]).unwrap();
        assert_eq!(model.predict(&x).unwrap(), x);
    }

    #[test]
    fn sigmoid_of_zero_is_half() {
        let model = LocalModel::new(vec![Layer::Sigmoid { dim: 4 }]).unwrap();
        let y = model.predict(&Matrix::zeros(1, 4)).unwrap();
        assert!(y.as_slice().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn hand_computed_linear() {
        let w = Matrix::from_rows(&[vec![1.0, -1.0]]).unwrap();
        let model = LocalModel::new(vec![Layer::linear(w, vec![0.0]).unwrap()]).unwrap();
        let y = model
            .predict(&Matrix::from_rows(&[vec![2.0, 3.0]]).unwrap())
            .unwrap();
        assert_eq!(y.as_slice(), &[-1.0]);
    }

    #[test]
    fn forward_rejects_bad_input() {
        let model = LocalModel::new(vec![Layer::Relu { dim: 2 }]).unwrap();
        assert!(model.forward(&Matrix::zeros(1, 3)).is_err());
    }

    #[test]
    fn adjacent_dims_must_match() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let err = LocalModel::new(vec![
            Layer::linear_init(3, 4, &mut rng),
            Layer::Relu { dim: 5 },
        ]);
        assert!(err.is_err());
    }

    #[test]
    fn linear_backward_is_transpose_product() {
        let w = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap();
        let model = LocalModel::new(vec![Layer::linear(w.clone(), vec![0.0; 3]).unwrap()]).unwrap();
        let (_, trace) = model
            .forward(&Matrix::from_rows(&[vec![0.3, 0.7]]).unwrap())
            .unwrap();
        let g = Matrix::from_rows(&[vec![1.0, -1.0, 0.5]]).unwrap();
        let grads = model.backward(&trace, &g).unwrap();
        // Wᵀ g = [1 - 3 + 2.5, 2 - 4 + 3]
        assert_eq!(grads.input.as_slice(), &[0.5, 1.0]);
    }

    #[test]
    fn relu_blocks_negative_preactivation() {
        let model = LocalModel::new(vec![Layer::Relu { dim: 2 }]).unwrap();
        let (_, trace) = model
            .forward(&Matrix::from_rows(&[vec![-1.0, 2.0]]).unwrap())
            .unwrap();
        let grads = model
            .backward(&trace, &Matrix::from_rows(&[vec![1.0, 1.0]]).unwrap())
            .unwrap();
        assert_eq!(grads.input.as_slice(), &[0.0, 1.0]);
    }

    #[test]
    fn two_layer_input_grad_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let model = LocalModel::mlp(&[5, 7, 3], Some(LayerKind::Softmax), &mut rng).unwrap();
        let x = Matrix::new(4, 5, (0..20).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let coeff =
            Matrix::new(4, 3, (0..12).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let (_, trace) = model.forward(&x).unwrap();
        let analytic = model.backward(&trace, &coeff).unwrap().input;
        let numeric = central_input_grad(&model, &x, &coeff, 1e-5);
        for (a, n) in analytic.as_slice().iter().zip(numeric.as_slice()) {
            let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-6);
            assert!(rel < 1e-4, "analytic {a} numeric {n}");
        }
    }

    #[test]
    fn softmax_rows_are_distributions() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let model = LocalModel::mlp(&[4, 6], Some(LayerKind::Softmax), &mut rng).unwrap();
        let x = Matrix::new(3, 4, (0..12).map(|_| rng.random_range(-3.0..3.0)).collect()).unwrap();
        let y = model.predict(&x).unwrap();
        for row in y.iter_rows() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|&p| p > 0.0 && p < 1.0));
        }
    }

    #[test]
    fn trace_replays_bit_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let model = LocalModel::mlp(&[3, 4, 2], Some(LayerKind::Sigmoid), &mut rng).unwrap();
        let x = Matrix::new(2, 3, vec![0.1, -0.2, 0.3, 1.0, 2.0, -3.0]).unwrap();
        let (_, trace) = model.forward(&x).unwrap();
        assert_eq!(trace.len(), model.layers().len());
        for (i, layer) in model.layers().iter().enumerate() {
            assert_eq!(&layer.forward(trace.layer_input(i)), trace.layer_output(i));
        }
    }
}
