use serde::Serialize;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::model::{Layer, LocalModel};

/// Outcome of comparing analytic gradients with central differences.
#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub checked: usize,
    pub failures: usize,
    /// Coordinates whose ± probes straddle a ReLU kink.
    pub indeterminate: usize,
    pub max_rel_error: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

/// Checks input and parameter gradients of `model` at `input` against
/// central differences with the given step.
///
/// The scalar probed is a fixed weighted sum of outputs so that every output
/// coordinate contributes.
pub fn grad_check(
    model: &LocalModel,
    input: &Matrix,
    step: f64,
    tol: f64,
) -> Result<GradCheckReport> {
    if !(step > 0.0) {
        return Err(Error::invalid("grad_check step must be positive"));
    }
    let (out, trace) = model.forward(input)?;
    let coeff = Matrix::from_vec_unchecked(
        out.rows(),
        out.cols(),
        (0..out.rows() * out.cols())
            .map(|i| ((i as f64) * 0.7 + 1.0).sin())
            .collect(),
    );
    let grads = model.backward(&trace, &coeff)?;
    let objective = |m: &LocalModel, x: &Matrix| -> (f64, Vec<bool>) {
        let t = m.trace_unchecked(x);
        let value = t
            .output()
            .as_slice()
            .iter()
            .zip(coeff.as_slice())
            .map(|(a, b)| a * b)
            .sum();
        (value, relu_pattern(m, &t))
    };

    let mut report = GradCheckReport {
        checked: 0,
        failures: 0,
        indeterminate: 0,
        max_rel_error: 0.0,
    };
    let mut record = |analytic: f64, plus: (f64, Vec<bool>), minus: (f64, Vec<bool>)| {
        report.checked += 1;
        if plus.1 != minus.1 {
            report.indeterminate += 1;
            return;
        }
        let numeric = (plus.0 - minus.0) / (2.0 * step);
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
        report.max_rel_error = report.max_rel_error.max(rel);
        if rel > tol {
            report.failures += 1;
        }
    };

    for i in 0..input.as_slice().len() {
        let mut plus = input.clone();
        plus.as_mut_slice()[i] += step;
        let mut minus = input.clone();
        minus.as_mut_slice()[i] -= step;
        record(
            grads.input.as_slice()[i],
            objective(model, &plus),
            objective(model, &minus),
        );
    }

    for (li, g) in grads.params.0.iter().enumerate() {
        let Some(g) = g else { continue };
        let analytic: Vec<f64> = g
            .weights
            .as_slice()
            .iter()
            .chain(&g.bias)
            .copied()
            .collect();
        for (pi, &a) in analytic.iter().enumerate() {
            let probe = |delta: f64| {
                let mut m = model.clone();
                if let Layer::Linear { weights, bias } = &mut m.layers_mut()[li] {
                    let nw = weights.as_slice().len();
                    if pi < nw {
                        weights.as_mut_slice()[pi] += delta;
                    } else {
                        bias[pi - nw] += delta;
                    }
                }
                objective(&m, input)
            };
            record(a, probe(step), probe(-step));
        }
    }
    Ok(report)
}

fn relu_pattern(model: &LocalModel, trace: &crate::model::ForwardTrace) -> Vec<bool> {
    model
        .layers()
        .iter()
        .enumerate()
        .filter(|(_, l)| matches!(l, Layer::Relu { .. }))
        .flat_map(|(i, _)| trace.layer_input(i).as_slice().iter().map(|&v| v > 0.0))
        .collect()
}
