use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::{Activation, DenseNet, Layer};
use crate::error::{HedgeError, Result};

pub const FORMAT_VERSION: u32 = 1;

/// Versioned JSON form of a [`DenseNet`].
///
/// `weights[i]` holds layer `i` row-major with shape `[fan_out][fan_in]`.
/// Numbers are written in shortest round-trip decimal form, so a save/load
/// cycle is bit-exact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetDocument {
    pub format_version: u32,
    pub layer_dims: Vec<usize>,
    pub activations: Vec<Activation>,
    pub dropout_rates: Vec<f64>,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl From<&DenseNet> for NetDocument {
    fn from(net: &DenseNet) -> Self {
        NetDocument {
            format_version: FORMAT_VERSION,
            layer_dims: net.layer_dims(),
            activations: net.layers().iter().map(|l| l.activation).collect(),
            dropout_rates: net.dropout_rates().to_vec(),
            weights: net.layers().iter().map(|l| l.weights.iter().copied().collect()).collect(),
            biases: net.layers().iter().map(|l| l.bias.to_vec()).collect(),
        }
    }
}

impl TryFrom<NetDocument> for DenseNet {
    type Error = HedgeError;

    fn try_from(doc: NetDocument) -> Result<Self> {
        if doc.format_version != FORMAT_VERSION {
            return Err(HedgeError::Format(format!(
                "unsupported checkpoint format version {}",
                doc.format_version
            )));
        }
        let n = doc.layer_dims.len().saturating_sub(1);
        if n == 0 || doc.activations.len() != n || doc.weights.len() != n || doc.biases.len() != n {
            return Err(HedgeError::Format("checkpoint layer counts disagree".into()));
        }
        let layers = (0..n)
            .map(|i| {
                let (fan_in, fan_out) = (doc.layer_dims[i], doc.layer_dims[i + 1]);
                let weights = Array2::from_shape_vec((fan_out, fan_in), doc.weights[i].clone())
                    .map_err(|e| HedgeError::Format(format!("layer {i} weights: {e}")))?;
                if doc.biases[i].len() != fan_out {
                    return Err(HedgeError::Format(format!("layer {i} bias length")));
                }
                Ok(Layer {
                    weights,
                    bias: Array1::from(doc.biases[i].clone()),
                    activation: doc.activations[i],
                })
            })
            .collect::<Result<Vec<_>>>()?;
        DenseNet::from_layers(layers, doc.dropout_rates).map_err(|e| HedgeError::Format(e.to_string()))
    }
}

impl DenseNet {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&NetDocument::from(self)).expect("network serialises")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: NetDocument = serde_json::from_str(text).map_err(|e| HedgeError::Format(e.to_string()))?;
        DenseNet::try_from(doc)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| HedgeError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HedgeError::io(path, e))?;
        Self::from_json(&text)
    }
}
