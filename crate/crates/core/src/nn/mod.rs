//! A small dense-network engine for the actor and critic.
//!
//! Layers compute `y = act(x W^T + b)` on row-major batches. Dropout is
//! inverted: kept units are scaled by `1 / (1 - p)` so that running without a
//! mask is the exact expectation of running with one.

mod adam;
mod checkpoint;
mod loss;

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::{NetDocument, FORMAT_VERSION};
pub use loss::{gaussian_nll, GaussianNll, LOG_VAR_MAX, LOG_VAR_MIN};

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{HedgeError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
    Identity,
}

impl Activation {
    fn apply(self, z: &mut Array2<f64>) {
        match self {
            Activation::Relu => z.mapv_inplace(|x| x.max(0.0)),
            Activation::Tanh => z.mapv_inplace(f64::tanh),
            Activation::Sigmoid => z.mapv_inplace(|x| 1.0 / (1.0 + (-x).exp())),
            Activation::Identity => {}
        }
    }

    /// Derivative expressed through the activation's output.
    fn derivative(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Identity => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
            Activation::Identity => "identity",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            "sigmoid" => Ok(Activation::Sigmoid),
            "identity" => Ok(Activation::Identity),
            other => Err(HedgeError::Format(format!("unknown activation {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// Shape `(fan_out, fan_in)`.
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn fan_in(&self) -> usize {
        self.weights.ncols()
    }

    pub fn fan_out(&self) -> usize {
        self.weights.nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet {
    layers: Vec<Layer>,
    /// One rate per hidden layer, applied to that layer's output.
    dropout_rates: Vec<f64>,
}

/// Per-hidden-layer masks for one batch; `None` entries mean no dropout.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMask {
    pub masks: Vec<Option<Array2<f64>>>,
    pub seed: Option<u64>,
}

impl DropoutMask {
    /// Fresh Bernoulli masks for `batch` rows. Layers with `p = 0` draw nothing.
    pub fn sample<R: Rng + ?Sized>(net: &DenseNet, batch: usize, rng: &mut R) -> Self {
        let masks = net
            .dropout_rates
            .iter()
            .zip(&net.layers)
            .map(|(&p, layer)| {
                (p > 0.0).then(|| {
                    let keep = 1.0 / (1.0 - p);
                    Array2::from_shape_simple_fn((batch, layer.fan_out()), || {
                        if rng.random::<f64>() < p {
                            0.0
                        } else {
                            keep
                        }
                    })
                })
            })
            .collect();
        DropoutMask { masks, seed: None }
    }

    pub fn from_seed(net: &DenseNet, batch: usize, seed: u64) -> Self {
        let mut mask = Self::sample(net, batch, &mut crate::seed::rng(seed));
        mask.seed = Some(seed);
        mask
    }

    /// True when every layer passes through unchanged.
    pub fn is_identity(&self) -> bool {
        self.masks.iter().all(Option::is_none)
    }
}

/// Activations kept from a forward pass for backpropagation.
#[derive(Debug, Clone)]
pub struct Trace {
    /// Input to each layer (after the previous layer's dropout).
    inputs: Vec<Array2<f64>>,
    /// Post-activation output of each layer (before dropout).
    outputs: Vec<Array2<f64>>,
    mask: Option<DropoutMask>,
}

impl Trace {
    pub fn output(&self) -> &Array2<f64> {
        self.outputs.last().expect("at least one layer")
    }
}

/// Gradients (or any other quantity) shaped like a network's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl Gradients {
    pub fn zeros_like(net: &DenseNet) -> Self {
        Gradients {
            weights: net.layers.iter().map(|l| Array2::zeros(l.weights.raw_dim())).collect(),
            biases: net.layers.iter().map(|l| Array1::zeros(l.bias.raw_dim())).collect(),
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.weights.iter_mut().for_each(|w| *w *= factor);
        self.biases.iter_mut().for_each(|b| *b *= factor);
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += b;
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            *a += b;
        }
    }

    /// Flattened copy in layer order, weights before biases.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut flat = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            flat.extend(w.iter());
            flat.extend(b.iter());
        }
        flat
    }

    fn matches(&self, net: &DenseNet) -> bool {
        self.weights.len() == net.layers.len()
            && self.biases.len() == net.layers.len()
            && net
                .layers
                .iter()
                .zip(self.weights.iter().zip(&self.biases))
                .all(|(l, (w, b))| w.dim() == l.weights.dim() && b.len() == l.bias.len())
    }
}

impl DenseNet {
    /// Build a network with uniform fan-in initialisation and zero biases.
    pub fn new<R: Rng + ?Sized>(
        layer_dims: &[usize],
        activations: &[Activation],
        dropout_rates: &[f64],
        rng: &mut R,
    ) -> Result<Self> {
        if layer_dims.len() < 2 || layer_dims.iter().any(|&d| d == 0) {
            return Err(HedgeError::Shape(format!("invalid layer dims {layer_dims:?}")));
        }
        let n_layers = layer_dims.len() - 1;
        if activations.len() != n_layers {
            return Err(HedgeError::Shape(format!(
                "{} activations for {} layers",
                activations.len(),
                n_layers
            )));
        }
        if dropout_rates.len() != n_layers - 1 {
            return Err(HedgeError::Shape(format!(
                "{} dropout rates for {} hidden layers",
                dropout_rates.len(),
                n_layers - 1
            )));
        }
        if let Some(p) = dropout_rates.iter().find(|p| !(0.0..1.0).contains(*p)) {
            return Err(HedgeError::Argument(format!("dropout rate {p} outside [0, 1)")));
        }
        let layers = layer_dims
            .windows(2)
            .zip(activations)
            .map(|(dims, &activation)| {
                let (fan_in, fan_out) = (dims[0], dims[1]);
                let bound = 1.0 / (fan_in as f64).sqrt();
                Layer {
                    weights: Array2::from_shape_simple_fn((fan_out, fan_in), || rng.random_range(-bound..bound)),
                    bias: Array1::zeros(fan_out),
                    activation,
                }
            })
            .collect();
        Ok(DenseNet {
            layers,
            dropout_rates: dropout_rates.to_vec(),
        })
    }

    /// Assemble from explicit layers (shapes are checked).
    pub fn from_layers(layers: Vec<Layer>, dropout_rates: Vec<f64>) -> Result<Self> {
        if layers.is_empty() || dropout_rates.len() + 1 != layers.len() {
            return Err(HedgeError::Shape("dropout rates must cover every hidden layer".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].fan_out() != pair[1].fan_in() {
                return Err(HedgeError::Shape(format!(
                    "layer output {} does not feed input {}",
                    pair[0].fan_out(),
                    pair[1].fan_in()
                )));
            }
        }
        for l in &layers {
            if l.bias.len() != l.fan_out() {
                return Err(HedgeError::Shape("bias length differs from fan-out".into()));
            }
        }
        if let Some(p) = dropout_rates.iter().find(|p| !(0.0..1.0).contains(*p)) {
            return Err(HedgeError::Argument(format!("dropout rate {p} outside [0, 1)")));
        }
        Ok(DenseNet { layers, dropout_rates })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn dropout_rates(&self) -> &[f64] {
        &self.dropout_rates
    }

    pub fn set_dropout(&mut self, rate: f64) {
        self.dropout_rates.iter_mut().for_each(|p| *p = rate);
    }

    pub fn layer_dims(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(Layer::fan_out))
            .collect()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(Layer::fan_out).unwrap_or(0)
    }

    /// `sum (d_i + 1) d_{i+1}`.
    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| (l.fan_in() + 1) * l.fan_out()).sum()
    }

    pub fn has_dropout(&self) -> bool {
        self.dropout_rates.iter().any(|&p| p > 0.0)
    }

    fn check_mask(&self, mask: &DropoutMask, batch: usize) -> Result<()> {
        if mask.masks.len() != self.dropout_rates.len() {
            return Err(HedgeError::Shape("mask layer count differs from network".into()));
        }
        for (m, layer) in mask.masks.iter().zip(&self.layers) {
            if let Some(m) = m {
                if m.dim() != (batch, layer.fan_out()) {
                    return Err(HedgeError::Shape(format!(
                        "mask shape {:?}, expected ({batch}, {})",
                        m.dim(),
                        layer.fan_out()
                    )));
                }
            }
        }
        Ok(())
    }

    fn check_input(&self, input: &ArrayView2<f64>) -> Result<()> {
        if input.ncols() != self.input_dim() {
            return Err(HedgeError::Shape(format!(
                "input width {}, network expects {}",
                input.ncols(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Forward a batch (one row per sample).
    pub fn forward_batch(&self, input: ArrayView2<f64>, mask: Option<&DropoutMask>) -> Result<Array2<f64>> {
        self.check_input(&input)?;
        if let Some(m) = mask {
            self.check_mask(m, input.nrows())?;
        }
        let mut x = input.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = x.dot(&layer.weights.t());
            z += &layer.bias;
            layer.activation.apply(&mut z);
            if let Some(Some(m)) = mask.and_then(|m| m.masks.get(i)) {
                z *= m;
            }
            x = z;
        }
        Ok(x)
    }

    /// Forward one sample.
    pub fn forward(&self, input: &[f64], mask: Option<&DropoutMask>) -> Result<Vec<f64>> {
        let view = ArrayView2::from_shape((1, input.len()), input).map_err(|e| HedgeError::Shape(e.to_string()))?;
        Ok(self.forward_batch(view, mask)?.into_raw_vec_and_offset().0)
    }

    /// Forward a batch keeping what [`DenseNet::backward`] needs.
    pub fn forward_trace(&self, input: ArrayView2<f64>, mask: Option<&DropoutMask>) -> Result<Trace> {
        self.check_input(&input)?;
        if let Some(m) = mask {
            self.check_mask(m, input.nrows())?;
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut outputs = Vec::with_capacity(self.layers.len());
        let mut x = input.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = x.dot(&layer.weights.t());
            z += &layer.bias;
            layer.activation.apply(&mut z);
            let next = match mask.and_then(|m| m.masks.get(i)) {
                Some(Some(m)) => &z * m,
                _ => z.clone(),
            };
            inputs.push(x);
            outputs.push(z);
            x = next;
        }
        Ok(Trace {
            inputs,
            outputs,
            mask: mask.cloned(),
        })
    }

    /// Backpropagate `upstream` (d loss / d output, one row per sample).
    ///
    /// Returns parameter gradients summed over the batch and the gradient
    /// with respect to the input.
    pub fn backward(&self, trace: &Trace, upstream: ArrayView2<f64>) -> Result<(Gradients, Array2<f64>)> {
        let out = trace.output();
        if upstream.dim() != out.dim() {
            return Err(HedgeError::Shape(format!(
                "upstream gradient {:?}, output {:?}",
                upstream.dim(),
                out.dim()
            )));
        }
        let n = self.layers.len();
        let mut weights = Vec::with_capacity(n);
        let mut biases = Vec::with_capacity(n);
        let mut grad = upstream.to_owned();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let act = layer.activation;
            if act != Activation::Identity {
                Zip::from(&mut grad)
                    .and(&trace.outputs[i])
                    .for_each(|g, &y| *g *= act.derivative(y));
            }
            weights.push(grad.t().dot(&trace.inputs[i]));
            biases.push(grad.sum_axis(Axis(0)));
            let mut below = grad.dot(&layer.weights);
            if i > 0 {
                if let Some(Some(m)) = trace.mask.as_ref().and_then(|m| m.masks.get(i - 1)) {
                    below *= m;
                }
            }
            grad = below;
        }
        weights.reverse();
        biases.reverse();
        Ok((Gradients { weights, biases }, grad))
    }

    /// Flattened parameters in layer order, weights (row-major) before biases.
    pub fn params_flat(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            flat.extend(l.weights.iter());
            flat.extend(l.bias.iter());
        }
        flat
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(HedgeError::Shape(format!(
                "{} values for {} parameters",
                flat.len(),
                self.param_count()
            )));
        }
        let mut it = flat.iter();
        for l in &mut self.layers {
            l.weights.iter_mut().chain(l.bias.iter_mut()).for_each(|p| *p = *it.next().unwrap());
        }
        Ok(())
    }

    pub fn same_architecture(&self, other: &DenseNet) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.weights.dim() == b.weights.dim() && a.activation == b.activation)
    }

    /// Gradient descent step `theta -= lr * grad`.
    pub fn apply_sgd(&mut self, grads: &Gradients, lr: f64) -> Result<()> {
        if !grads.matches(self) {
            return Err(HedgeError::Shape("gradient shapes differ from network".into()));
        }
        for (l, (w, b)) in self.layers.iter_mut().zip(grads.weights.iter().zip(&grads.biases)) {
            l.weights.scaled_add(-lr, w);
            l.bias.scaled_add(-lr, b);
        }
        Ok(())
    }
}

/// Polyak averaging `target <- rho * source + (1 - rho) * target`.
pub fn soft_update(target: &mut DenseNet, source: &DenseNet, rho: f64) -> Result<()> {
    if !target.same_architecture(source) {
        return Err(HedgeError::Shape("soft update between different architectures".into()));
    }
    if !(0.0..=1.0).contains(&rho) {
        return Err(HedgeError::Argument(format!("soft update rate {rho} outside [0, 1]")));
    }
    for (t, s) in target.layers.iter_mut().zip(&source.layers) {
        Zip::from(&mut t.weights)
            .and(&s.weights)
            .for_each(|t, &s| *t = rho * s + (1.0 - rho) * *t);
        Zip::from(&mut t.bias)
            .and(&s.bias)
            .for_each(|t, &s| *t = rho * s + (1.0 - rho) * *t);
    }
    Ok(())
}
