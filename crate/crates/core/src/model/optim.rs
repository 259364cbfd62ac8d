use crate::error::{Error, Result};
use crate::model::{Layer, LocalModel, ParamGrads};

/// Momentum SGD: `v ← μ·v + g`, `p ← p − lr·v`.
///
/// Velocity is kept per parameter and survives across steps.
#[derive(Debug, Clone)]
pub struct Sgd {
    lr: f64,
    momentum: f64,
    velocity: Option<ParamGrads>,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64) -> Result<Self> {
        if !lr.is_finite() || lr < 0.0 {
            return Err(Error::invalid(format!(
                "learning rate {lr} must be finite and >= 0"
            )));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::invalid(format!(
                "momentum {momentum} must be in [0, 1)"
            )));
        }
        Ok(Self {
            lr,
            momentum,
            velocity: None,
        })
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn step(&mut self, model: &mut LocalModel, grads: &ParamGrads) -> Result<()> {
        model.check_grads(grads)?;
        let velocity = self
            .velocity
            .get_or_insert_with(|| ParamGrads::zeros_like(model));
        model.check_grads(velocity)?;
        for ((layer, g), v) in model
            .layers_mut()
            .iter_mut()
            .zip(&grads.0)
            .zip(velocity.0.iter_mut())
        {
            let (Layer::Linear { weights, bias }, Some(g), Some(v)) = (layer, g, v) else {
                continue;
            };
            update(
                weights.as_mut_slice(),
                g.weights.as_slice(),
                v.weights.as_mut_slice(),
                self.lr,
                self.momentum,
            );
            update(bias, &g.bias, &mut v.bias, self.lr, self.momentum);
        }
        Ok(())
    }
}

fn update(params: &mut [f64], grads: &[f64], velocity: &mut [f64], lr: f64, momentum: f64) {
    for ((p, &g), v) in params.iter_mut().zip(grads).zip(velocity) {
        *v = momentum * *v + g;
        *p -= lr * *v;
    }
}

/// One momentum-SGD step with a fresh velocity state.
pub fn sgd_step(
    model: &LocalModel,
    grads: &ParamGrads,
    lr: f64,
    momentum: f64,
) -> Result<LocalModel> {
    if lr <= 0.0 {
        return Err(Error::invalid("sgd_step needs a positive learning rate"));
    }
    let mut out = model.clone();
    Sgd::new(lr, momentum)?.step(&mut out, grads)?;
    Ok(out)
}
