//! Feed-forward dense networks with explicit forward caches and backprop.
//!
//! A [`DenseNet`] is pure parameters. Activations needed for the backward pass
//! live in a caller-owned [`ForwardCache`], so a frozen network can be shared
//! across threads while every user keeps its own cache.

use std::fmt;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::SeededRng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Relu,
    LeakyRelu(f64),
    Tanh,
    Sigmoid,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::LeakyRelu(slope) => {
                if z > 0.0 {
                    z
                } else {
                    slope * z
                }
            }
            Activation::Tanh => z.tanh(),
            Activation::Sigmoid => sigmoid(z),
            Activation::Identity => z,
        }
    }

    /// Derivative given the pre-activation `z` and the output `a = apply(z)`.
    #[inline]
    pub fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu(slope) => {
                if z > 0.0 {
                    1.0
                } else {
                    slope
                }
            }
            Activation::Tanh => 1.0 - a * a,
            Activation::Sigmoid => a * (1.0 - a),
            Activation::Identity => 1.0,
        }
    }

    pub fn is_rectifier(self) -> bool {
        matches!(self, Activation::Relu | Activation::LeakyRelu(_))
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::LeakyRelu(_) => "leaky_relu",
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
            Activation::Identity => "identity",
        }
    }

    /// Parses `relu`, `tanh`, `sigmoid`, `identity`, `leaky_relu` or
    /// `leaky_relu(0.2)`.
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        Ok(match s {
            "relu" => Activation::Relu,
            "tanh" => Activation::Tanh,
            "sigmoid" => Activation::Sigmoid,
            "identity" | "linear" => Activation::Identity,
            "leaky_relu" => Activation::LeakyRelu(0.2),
            _ => {
                let slope = s
                    .strip_prefix("leaky_relu(")
                    .and_then(|r| r.strip_suffix(')'))
                    .and_then(|v| v.trim().parse::<f64>().ok())
                    .ok_or_else(|| Error::Config(format!("unknown activation `{s}`")))?;
                Activation::LeakyRelu(slope)
            }
        })
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Activation::LeakyRelu(slope) => write!(f, "leaky_relu({slope:?})"),
            other => f.write_str(other.name()),
        }
    }
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Weight initialization scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InitScheme {
    /// He for rectifier layers, Glorot otherwise.
    #[default]
    Auto,
    /// Uniform Glorot: `U(±sqrt(6 / (fan_in + fan_out)))`.
    Glorot,
    /// Uniform He: `U(±sqrt(6 / fan_in))`.
    He,
}

/// One affine layer followed by an elementwise activation: `act(x W + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `fan_in x fan_out`.
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Dense {
    pub fn fan_in(&self) -> usize {
        self.weights.rows()
    }

    pub fn fan_out(&self) -> usize {
        self.weights.cols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet {
    layers: Vec<Dense>,
}

/// Per-call activation record consumed by [`DenseNet::backward`].
#[derive(Debug, Clone, Default)]
pub struct ForwardCache {
    /// `acts[0]` is the input batch, `acts[l + 1]` the output of layer `l`.
    acts: Vec<Matrix>,
    pre: Vec<Matrix>,
}

impl ForwardCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.pre.is_empty()
    }

    pub fn clear(&mut self) {
        self.acts.clear();
        self.pre.clear();
    }

    pub fn batch_rows(&self) -> Option<usize> {
        self.acts.first().map(Matrix::rows)
    }

    /// Pre-activation matrix of every layer from the last forward pass.
    pub fn pre_activations(&self) -> &[Matrix] {
        &self.pre
    }
}

/// Parameter gradients, shape-congruent with the owning network.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrad>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

/// Result of a backward pass.
#[derive(Debug, Clone)]
pub struct Backprop {
    pub params: Gradients,
    /// Gradient with respect to the input batch.
    pub input: Matrix,
}

impl Gradients {
    pub fn zeros_like(net: &DenseNet) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGrad {
                    weights: Matrix::zeros(l.fan_in(), l.fan_out()),
                    bias: vec![0.0; l.fan_out()],
                })
                .collect(),
        }
    }

    /// Flat views in parameter order: `w0, b0, w1, b1, ...`.
    pub fn slices(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weights.data(), l.bias.as_slice()])
            .collect()
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weights.data_mut(), l.bias.as_mut_slice()])
            .collect()
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &Gradients, scale: f64) -> Result<()> {
        if !self.congruent(other) {
            return Err(Error::dims(
                "Gradients::add_scaled",
                "congruent gradients",
                "different layer shapes",
            ));
        }
        for (dst, src) in self.slices_mut().into_iter().zip(other.slices()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += scale * s;
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, s: f64) {
        for dst in self.slices_mut() {
            dst.iter_mut().for_each(|v| *v *= s);
        }
    }

    pub fn is_zero(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|&v| v == 0.0))
    }

    pub fn congruent(&self, other: &Gradients) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.weights.shape() == b.weights.shape() && a.bias.len() == b.bias.len())
    }

    pub(crate) fn congruent_with(&self, net: &DenseNet) -> bool {
        self.layers.len() == net.layers.len()
            && self.layers.iter().zip(&net.layers).all(|(g, l)| {
                g.weights.shape() == l.weights.shape() && g.bias.len() == l.bias.len()
            })
    }

    /// Human-readable location of flat parameter `index` within slice `slice`.
    pub(crate) fn param_path(&self, slice: usize, index: usize) -> String {
        let layer = slice / 2;
        if slice % 2 == 0 {
            let cols = self.layers[layer].weights.cols().max(1);
            format!("layer[{layer}].weights[{}, {}]", index / cols, index % cols)
        } else {
            format!("layer[{layer}].bias[{index}]")
        }
    }
}

impl DenseNet {
    /// Network with zero parameters. `dims` lists input, hidden and output
    /// widths; one activation per layer.
    pub fn new(dims: &[usize], activations: &[Activation]) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::Config(
                "a network needs at least an input and an output width".into(),
            ));
        }
        if activations.len() != dims.len() - 1 {
            return Err(Error::dims(
                "DenseNet::new activations",
                dims.len() - 1,
                activations.len(),
            ));
        }
        if let Some(i) = dims.iter().position(|&d| d == 0) {
            return Err(Error::Config(format!("layer width {i} is zero")));
        }
        let layers = dims
            .windows(2)
            .zip(activations)
            .map(|(w, &activation)| Dense {
                weights: Matrix::zeros(w[0], w[1]),
                bias: vec![0.0; w[1]],
                activation,
            })
            .collect();
        Ok(Self { layers })
    }

    /// Multilayer perceptron with a shared hidden activation.
    pub fn mlp(
        input: usize,
        hidden: &[usize],
        output: usize,
        hidden_act: Activation,
        output_act: Activation,
    ) -> Result<Self> {
        let mut dims = vec![input];
        dims.extend_from_slice(hidden);
        dims.push(output);
        let mut acts = vec![hidden_act; hidden.len()];
        acts.push(output_act);
        Self::new(&dims, &acts)
    }

    pub(crate) fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("a network needs at least one layer".into()));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].fan_out() != pair[1].fan_in() {
                return Err(Error::dims(
                    "DenseNet layer chain",
                    format!("layer {} fan_in {}", i + 1, pair[0].fan_out()),
                    pair[1].fan_in(),
                ));
            }
        }
        for l in &layers {
            if l.bias.len() != l.fan_out() {
                return Err(Error::dims("DenseNet bias", l.fan_out(), l.bias.len()));
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn layer_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.input_dim()];
        dims.extend(self.layers.iter().map(Dense::fan_out));
        dims
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].fan_out()
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.data().len() + l.bias.len())
            .sum()
    }

    /// Flat parameter views in the same order as [`Gradients::slices`].
    pub fn param_slices(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weights.data(), l.bias.as_slice()])
            .collect()
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weights.data_mut(), l.bias.as_mut_slice()])
            .collect()
    }

    /// Draws weights per `scheme`; biases are zeroed.
    pub fn init_params(&mut self, scheme: InitScheme, rng: &mut SeededRng) {
        for layer in &mut self.layers {
            let fan_in = layer.fan_in() as f64;
            let fan_out = layer.fan_out() as f64;
            let he = match scheme {
                InitScheme::Auto => layer.activation.is_rectifier(),
                InitScheme::Glorot => false,
                InitScheme::He => true,
            };
            let bound = if he {
                (6.0 / fan_in).sqrt()
            } else {
                (6.0 / (fan_in + fan_out)).sqrt()
            };
            for w in layer.weights.data_mut() {
                *w = rng.uniform(-bound, bound);
            }
            layer.bias.iter_mut().for_each(|b| *b = 0.0);
        }
    }

    fn check_input(&self, batch: &Matrix) -> Result<()> {
        if batch.cols() != self.input_dim() {
            return Err(Error::dims(
                "DenseNet::forward input columns",
                self.input_dim(),
                batch.cols(),
            ));
        }
        Ok(())
    }

    /// Forward pass without recording activations.
    pub fn predict(&self, batch: &Matrix) -> Result<Matrix> {
        self.check_input(batch)?;
        let mut x = batch.clone();
        for layer in &self.layers {
            let mut z = x.matmul(&layer.weights)?;
            z.add_row_vector(&layer.bias)?;
            let act = layer.activation;
            z.data_mut().iter_mut().for_each(|v| *v = act.apply(*v));
            x = z;
        }
        Ok(x)
    }

    /// Forward pass that records per-layer activations into `cache`,
    /// replacing anything it held.
    pub fn forward(&self, batch: &Matrix, cache: &mut ForwardCache) -> Result<Matrix> {
        self.check_input(batch)?;
        cache.clear();
        cache.acts.push(batch.clone());
        for layer in &self.layers {
            let x = cache.acts.last().expect("input pushed above");
            let mut z = x.matmul(&layer.weights)?;
            z.add_row_vector(&layer.bias)?;
            let act = layer.activation;
            let a = z.map(|v| act.apply(v));
            cache.pre.push(z);
            cache.acts.push(a);
        }
        Ok(cache.acts.last().cloned().expect("at least one layer"))
    }

    /// Backpropagates `upstream` (dLoss/dOutput) through the activations in
    /// `cache`, returning parameter gradients and dLoss/dInput.
    pub fn backward(&self, cache: &ForwardCache, upstream: &Matrix) -> Result<Backprop> {
        let (params, input) = self.backprop(cache, upstream, true)?;
        Ok(Backprop {
            params: params.expect("parameter gradients requested"),
            input,
        })
    }

    /// Like [`DenseNet::backward`] but only computes dLoss/dInput.
    pub fn backward_input(&self, cache: &ForwardCache, upstream: &Matrix) -> Result<Matrix> {
        Ok(self.backprop(cache, upstream, false)?.1)
    }

    fn backprop(
        &self,
        cache: &ForwardCache,
        upstream: &Matrix,
        want_params: bool,
    ) -> Result<(Option<Gradients>, Matrix)> {
        if cache.is_empty() {
            return Err(Error::Usage(
                "backward called without a preceding forward pass".into(),
            ));
        }
        if cache.pre.len() != self.layers.len() {
            return Err(Error::Usage(
                "forward cache was recorded by a different network".into(),
            ));
        }
        let out = cache.acts.last().expect("non-empty cache");
        if upstream.shape() != out.shape() {
            return Err(Error::dims(
                "DenseNet::backward upstream gradient",
                format!("{:?}", out.shape()),
                format!("{:?}", upstream.shape()),
            ));
        }
        let mut grads = want_params.then(|| Gradients::zeros_like(self));
        let mut delta = upstream.clone();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let act = layer.activation;
            let z = &cache.pre[l];
            let a = &cache.acts[l + 1];
            for ((d, &zv), &av) in delta.data_mut().iter_mut().zip(z.data()).zip(a.data()) {
                *d *= act.derivative(zv, av);
            }
            if let Some(g) = grads.as_mut() {
                g.layers[l].weights = cache.acts[l].t_matmul(&delta)?;
                g.layers[l].bias = delta.column_sums();
            }
            delta = delta.matmul_t(&layer.weights)?;
        }
        Ok((grads, delta))
    }

    /// SHA-256 over layer shapes, activations and parameter bit patterns.
    pub fn checksum(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        for layer in &self.layers {
            h.update((layer.fan_in() as u64).to_le_bytes());
            h.update((layer.fan_out() as u64).to_le_bytes());
            h.update(layer.activation.to_string().as_bytes());
            for v in layer.weights.data().iter().chain(&layer.bias) {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        h.finalize().into()
    }

    pub fn all_finite(&self) -> bool {
        self.param_slices()
            .iter()
            .all(|s| s.iter().all(|v| v.is_finite()))
    }
}

pub fn hex_digest(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
