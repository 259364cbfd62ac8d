//! Versioned JSON documents for local models.
//!
//! Floats are written in shortest round-trip decimal form, so a model read
//! back from its own checkpoint is bit-identical.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::model::{Layer, LayerKind, LocalModel};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerRecord {
    pub kind: LayerKind,
    #[serde(rename = "in")]
    pub in_dim: usize,
    #[serde(rename = "out")]
    pub out_dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bias: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelCheckpoint {
    pub version: u32,
    pub protocol: String,
    pub layers: Vec<LayerRecord>,
}

impl From<&Layer> for LayerRecord {
    fn from(layer: &Layer) -> Self {
        let (weights, bias) = match layer {
            Layer::Linear { weights, bias } => (Some(weights.to_rows()), Some(bias.clone())),
            _ => (None, None),
        };
        LayerRecord {
            kind: layer.kind(),
            in_dim: layer.in_dim(),
            out_dim: layer.out_dim(),
            weights,
            bias,
        }
    }
}

impl TryFrom<&LayerRecord> for Layer {
    type Error = Error;

    fn try_from(rec: &LayerRecord) -> Result<Self> {
        match rec.kind {
            LayerKind::Linear => {
                let (Some(w), Some(b)) = (&rec.weights, &rec.bias) else {
                    return Err(Error::invalid(
                        "linear layer record without weights or bias",
                    ));
                };
                let weights = Matrix::from_rows(w)?;
                if weights.shape() != (rec.out_dim, rec.in_dim) {
                    return Err(Error::shape(format!(
                        "linear weights {:?} do not match declared {}x{}",
                        weights.shape(),
                        rec.out_dim,
                        rec.in_dim
                    )));
                }
                Layer::linear(weights, b.clone())
            }
            kind => {
                if rec.in_dim != rec.out_dim {
                    return Err(Error::shape("activation layer with in != out"));
                }
                if rec.weights.is_some() || rec.bias.is_some() {
                    return Err(Error::invalid("activation layer carries parameters"));
                }
                Layer::activation(kind, rec.in_dim)
            }
        }
    }
}

impl LocalModel {
    pub fn to_records(&self) -> Vec<LayerRecord> {
        self.layers().iter().map(LayerRecord::from).collect()
    }

    pub fn from_records(records: &[LayerRecord]) -> Result<Self> {
        let layers = records
            .iter()
            .map(Layer::try_from)
            .collect::<Result<Vec<_>>>()?;
        LocalModel::new(layers)
    }

    pub fn to_checkpoint(&self, protocol: &str) -> ModelCheckpoint {
        ModelCheckpoint {
            version: CHECKPOINT_VERSION,
            protocol: protocol.to_string(),
            layers: self.to_records(),
        }
    }

    pub fn from_checkpoint(ck: &ModelCheckpoint) -> Result<Self> {
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::invalid(format!(
                "unsupported checkpoint version {}",
                ck.version
            )));
        }
        Self::from_records(&ck.layers)
    }
}
