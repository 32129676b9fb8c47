use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::layers::{init_params, Layer, LayerSpec, Mode};
use super::tensor::Tensor;
use crate::descriptor::FULL_BINS;
use crate::error::{Error, Result};
use crate::rng;

/// Network family, named after the dimensionality of its first
/// convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "2d")]
    Net2d,
    #[serde(rename = "3d")]
    Net3d,
    #[serde(rename = "4d")]
    Net4d,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Net2d, Variant::Net3d, Variant::Net4d];

    /// Per-sample input shape, channel axis last, for the full descriptor
    /// layout.
    pub fn input_shape(self) -> Vec<usize> {
        let [a, b, c, d] = FULL_BINS;
        match self {
            Variant::Net4d => vec![a, b, c, d, 1],
            Variant::Net3d => vec![a, b, c * d, 1],
            Variant::Net2d => vec![a * 2, b / 2 * c * d, 1],
        }
    }

    /// Layer stack for `n_classes` outputs.
    pub fn layers(self, n_classes: usize, dropout: f64) -> Vec<LayerSpec> {
        use LayerSpec::*;
        let conv = |kernel: &[usize], filters| Conv { kernel: kernel.to_vec(), filters };
        let [a, b, c, d] = FULL_BINS;
        let plane = vec![a * 2, b / 2 * c * d];
        let mut stack = match self {
            Variant::Net4d => vec![
                conv(&[5, 2, 2, 1], 32),
                Relu,
                conv(&[5, 2, 2, 1], 64),
                Relu,
                Reshape { shape: [plane.as_slice(), &[64]].concat() },
                conv(&[5, 5], 48),
                Relu,
            ],
            Variant::Net3d => vec![
                conv(&[5, 5, 1], 32),
                Relu,
                conv(&[5, 5, 1], 64),
                Relu,
                conv(&[5, 5, 1], 48),
                Relu,
                Reshape { shape: [plane.as_slice(), &[48]].concat() },
            ],
            Variant::Net2d => vec![
                conv(&[5, 5], 32),
                Relu,
                conv(&[5, 5], 64),
                Relu,
                conv(&[5, 5], 48),
                Relu,
            ],
        };
        stack.extend([
            MaxPool2d,
            Flatten,
            Dense { units: 1024 },
            Relu,
            Dropout { rate: dropout },
            Dense { units: n_classes },
        ]);
        stack
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Net2d => "2d",
            Variant::Net3d => "3d",
            Variant::Net4d => "4d",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().trim_start_matches("net") {
            "2d" => Ok(Variant::Net2d),
            "3d" => Ok(Variant::Net3d),
            "4d" => Ok(Variant::Net4d),
            _ => Err(Error::invalid(format!("unknown network variant {s:?} (expected 2d, 3d or 4d)"))),
        }
    }
}

/// Architecture and training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub variant: Variant,
    pub n_classes: usize,
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
    pub learning_rate: f64,
    pub dropout: f64,
    pub epochs: usize,
    /// Samples per optimizer step; `None` uses the whole training set.
    pub batch_size: Option<usize>,
    /// Multiplier applied to descriptor values before the first layer.
    pub input_scale: f64,
    pub seed: u64,
}

impl NetworkConfig {
    pub const DEFAULT_LEARNING_RATE: f64 = 5e-4;
    pub const DEFAULT_DROPOUT: f64 = 0.5;
    pub const DEFAULT_EPOCHS: usize = 2000;

    pub fn new(variant: Variant, n_classes: usize) -> Self {
        NetworkConfig {
            variant,
            n_classes,
            input_shape: variant.input_shape(),
            layers: variant.layers(n_classes, Self::DEFAULT_DROPOUT),
            learning_rate: Self::DEFAULT_LEARNING_RATE,
            dropout: Self::DEFAULT_DROPOUT,
            epochs: Self::DEFAULT_EPOCHS,
            batch_size: None,
            input_scale: 1.0,
            seed: 0,
        }
    }

    pub fn with_dropout(mut self, rate: f64) -> Self {
        self.dropout = rate;
        self.layers = self.variant.layers(self.n_classes, rate);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 {
            return Err(Error::invalid("a classifier needs at least two classes"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid(format!("dropout must be in [0, 1), got {}", self.dropout)));
        }
        if self.batch_size == Some(0) {
            return Err(Error::invalid("batch size must be positive"));
        }
        if !(self.input_scale > 0.0 && self.input_scale.is_finite()) {
            return Err(Error::invalid("input scale must be positive"));
        }
        Ok(())
    }
}

/// Summary row for one layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerInfo {
    pub kind: String,
    pub output_shape: Vec<usize>,
    pub params: usize,
}

/// A feed-forward stack of layers with reverse-mode gradients.
#[derive(Debug, Clone)]
pub struct Network {
    input_shape: Vec<usize>,
    layers: Vec<Layer>,
}

impl Network {
    /// Builds the stack and initializes weights from `seed`.
    pub fn build(input_shape: &[usize], specs: &[LayerSpec], seed: u64) -> Result<Network> {
        let mut net = Self::build_uninit(input_shape, specs)?;
        for (i, layer) in net.layers.iter_mut().enumerate() {
            init_params(layer, rng::derive_seed(seed, i as u64));
        }
        Ok(net)
    }

    pub(crate) fn build_uninit(input_shape: &[usize], specs: &[LayerSpec]) -> Result<Network> {
        if input_shape.is_empty() || input_shape.iter().any(|&d| d == 0) {
            return Err(Error::ShapeMismatch(format!("invalid input shape {input_shape:?}")));
        }
        let mut layers: Vec<Layer> = Vec::with_capacity(specs.len());
        let mut shape = input_shape.to_vec();
        for spec in specs {
            let layer = Layer::build(spec, &shape)?;
            shape = layer.out_shape.clone();
            layers.push(layer);
        }
        if let Some(first) = layers.first_mut() {
            first.set_input_grad(false);
        }
        Ok(Network { input_shape: input_shape.to_vec(), layers })
    }

    pub fn from_config(cfg: &NetworkConfig) -> Result<Network> {
        cfg.validate()?;
        let net = Self::build(&cfg.input_shape, &cfg.layers, cfg.seed)?;
        if net.output_shape() != [cfg.n_classes] {
            return Err(Error::ShapeMismatch(format!(
                "network output {:?} does not match {} classes",
                net.output_shape(),
                cfg.n_classes
            )));
        }
        Ok(net)
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> &[usize] {
        self.layers.last().map_or(&self.input_shape, |l| &l.out_shape)
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec.clone()).collect()
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    pub fn summary(&self) -> Vec<LayerInfo> {
        self.layers
            .iter()
            .map(|l| LayerInfo { kind: l.spec.kind_name(), output_shape: l.out_shape.clone(), params: l.param_count() })
            .collect()
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.shape().len() != self.input_shape.len() + 1 || x.shape()[1..] != self.input_shape[..] {
            return Err(Error::ShapeMismatch(format!(
                "expected batched input (B, {:?}), got {:?}",
                self.input_shape,
                x.shape()
            )));
        }
        if !x.all_finite() {
            return Err(Error::invalid("network input contains non-finite values"));
        }
        Ok(())
    }

    /// Runs all layers on a batch shaped `(B, input_shape...)`.
    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        self.forward_to(x, self.layers.len(), mode)
    }

    /// Output of the first `n_layers` layers (`0` returns the input).
    pub fn forward_to(&mut self, x: &Tensor, n_layers: usize, mode: Mode) -> Result<Tensor> {
        self.check_input(x)?;
        if n_layers > self.layers.len() {
            return Err(Error::invalid(format!("network has only {} layers", self.layers.len())));
        }
        let mut h = x.clone();
        for (i, layer) in self.layers[..n_layers].iter_mut().enumerate() {
            let m = match mode {
                Mode::Train { seed } => Mode::Train { seed: rng::derive_seed(seed, i as u64) },
                Mode::Eval => Mode::Eval,
            };
            h = layer.forward(h, m);
        }
        Ok(h)
    }

    /// Accumulates parameter gradients from the gradient of the output;
    /// returns the input gradient when enabled with `set_input_grad`.
    pub fn backward(&mut self, grad_out: Tensor) -> Option<Tensor> {
        let mut g = Some(grad_out);
        for layer in self.layers.iter_mut().rev() {
            g = layer.backward(g?);
        }
        g
    }

    pub fn zero_grads(&mut self) {
        self.layers.iter_mut().for_each(Layer::zero_grads);
    }

    /// Drops activations cached by the last training forward pass.
    pub fn clear_cache(&mut self) {
        self.layers.iter_mut().for_each(Layer::clear_cache);
    }

    pub fn set_input_grad(&mut self, on: bool) {
        if let Some(first) = self.layers.first_mut() {
            first.set_input_grad(on);
        }
    }

    /// When frozen, dropout layers reuse their last mask in training mode.
    pub fn freeze_dropout(&mut self, frozen: bool) {
        self.layers.iter_mut().for_each(|l| l.freeze_dropout(frozen));
    }

    /// Named parameter buffers in layer order.
    pub fn named_params(&self) -> Vec<(String, &[f64])> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            if let Some((w, b)) = l.params() {
                out.push((format!("layer{i}.weight"), w));
                out.push((format!("layer{i}.bias"), b));
            }
        }
        out
    }

    /// Shapes of the tensors returned by [`Network::named_params`].
    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        let mut out = Vec::new();
        for l in &self.layers {
            if let Some((w, b)) = l.param_shapes() {
                out.push(w);
                out.push(b);
            }
        }
        out
    }

    /// `(param, grad)` pairs in the same order as [`Network::named_params`].
    pub(crate) fn params_and_grads_mut(&mut self) -> Vec<(&mut [f64], &mut [f64])> {
        let mut out = Vec::new();
        for l in self.layers.iter_mut() {
            if let Some((w, b, gw, gb)) = l.params_and_grads_mut() {
                out.push((w.as_mut_slice(), gw.as_mut_slice()));
                out.push((b.as_mut_slice(), gb.as_mut_slice()));
            }
        }
        out
    }

    /// Overwrites all parameters; `values` follows [`Network::named_params`].
    pub fn load_params(&mut self, values: &[Vec<f64>]) -> Result<()> {
        let mut slots = self.params_and_grads_mut();
        if slots.len() != values.len() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} parameter tensors, got {}",
                slots.len(),
                values.len()
            )));
        }
        for ((p, _), v) in slots.iter_mut().zip(values) {
            if p.len() != v.len() {
                return Err(Error::ShapeMismatch(format!("parameter tensor needs {} values, got {}", p.len(), v.len())));
            }
            p.copy_from_slice(v);
        }
        Ok(())
    }

    pub(crate) fn layer_kinds(&self) -> Vec<String> {
        self.layers.iter().map(|l| l.spec.kind_name()).collect()
    }

    pub(crate) fn param_layer_indices(&self) -> Vec<usize> {
        (0..self.layers.len()).filter(|&i| self.layers[i].param_count() > 0).collect()
    }
}

/// Mean softmax cross-entropy over a batch of logits `(B, n)` and the
/// gradient with respect to the logits.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let (b, n) = match logits.shape() {
        &[b, n] => (b, n),
        s => return Err(Error::ShapeMismatch(format!("logits must be (B, n), got {s:?}"))),
    };
    if labels.len() != b || labels.iter().any(|&l| l >= n) {
        return Err(Error::invalid("labels do not match the logits batch"));
    }
    let mut grad = vec![0.0; b * n];
    let mut loss = 0.0;
    for (s, &label) in labels.iter().enumerate() {
        let row = &logits.data()[s * n..(s + 1) * n];
        let probs = softmax(row);
        loss -= probs[label].max(f64::MIN_POSITIVE).ln();
        for (k, p) in probs.iter().enumerate() {
            grad[s * n + k] = (p - if k == label { 1.0 } else { 0.0 }) / b as f64;
        }
    }
    Ok((loss / b as f64, Tensor::new(vec![b, n], grad)?))
}

/// Numerically stable softmax of one row.
pub fn softmax(row: &[f64]) -> Vec<f64> {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}
