//! Small dense networks with hand-written reverse-mode gradients.
//!
//! Everything the encoder and decoder need, and nothing more: fully connected
//! layers with a per-layer activation, an exact backward pass, Adam, seeded
//! Glorot initialization, and checkpoints that round-trip byte-for-byte.
//! Gradients are verified against central finite differences (see
//! [`finite_difference_gradient`]); the analytic pass is the one the trainer
//! uses, the numeric one exists only to catch mistakes in it.

use std::fs;
use std::io::{Read as _, Write as _};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Additive floor applied by [`Activation::SoftplusFloor`] so variance heads
/// can never collapse to zero.
pub const VARIANCE_FLOOR: f64 = 1e-6;

/// Default Adam learning rate; small because inputs are standardized and the
/// variance heads are sensitive early in training.
pub const DEFAULT_LEARNING_RATE: f64 = 1e-5;

/// Numerically stable `ln(1 + e^x)`.
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        // e^-x underflows the ln(1+·) expansion's usefulness; identity holds
        // to full precision here.
        x
    } else {
        x.exp().ln_1p()
    }
}

/// `softplus(x) + VARIANCE_FLOOR`: a strictly positive variance link.
pub fn softplus_floor(x: f64) -> f64 {
    softplus(x) + VARIANCE_FLOOR
}

/// Inverse of [`softplus_floor`]: the raw pre-activation that maps to
/// variance `v`. Used to build networks whose heads hit exact target
/// variances. Requires `v > VARIANCE_FLOOR`.
pub fn inverse_softplus_floor(v: f64) -> crate::error::Result<f64> {
    let s = v - VARIANCE_FLOOR;
    if !(s > 0.0) {
        return Err(crate::error::Error::InvalidConfig(format!(
            "variance {v} not above the floor {VARIANCE_FLOOR}"
        )));
    }
    if s > 30.0 {
        Ok(s)
    } else {
        Ok(s.exp_m1().ln())
    }
}

/// Logistic sigmoid, the derivative of softplus.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Elementwise activation applied after a layer's affine map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    /// No-op; used for output layers whose heads apply their own links.
    Identity,
    /// Hyperbolic tangent for hidden layers.
    Tanh,
    /// `softplus(x) + 1e-6`, a positive link for variance outputs.
    SoftplusFloor,
}

impl Activation {
    /// Apply the activation to one pre-activation value.
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Tanh => x.tanh(),
            Activation::SoftplusFloor => softplus_floor(x),
        }
    }

    /// Derivative with respect to the pre-activation value.
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Activation::SoftplusFloor => sigmoid(x),
        }
    }
}

/// One fully connected layer: `activation(W·x + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `out × in` weight matrix.
    pub weights: Array2<f64>,
    /// Per-output bias.
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl Layer {
    /// Number of inputs this layer accepts.
    pub fn input_dim(&self) -> usize {
        self.weights.ncols()
    }

    /// Number of outputs this layer produces.
    pub fn output_dim(&self) -> usize {
        self.weights.nrows()
    }
}

/// A feed-forward stack of [`Layer`]s.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet {
    layers: Vec<Layer>,
}

/// Saved intermediate state from [`DenseNet::forward_trace`], needed to run
/// the backward pass for that same input.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// Input to each layer (`layer_inputs[0]` is the network input).
    layer_inputs: Vec<Array1<f64>>,
    /// Pre-activation value of each layer.
    pre_activations: Vec<Array1<f64>>,
}

/// Parameter gradients, one `(weights, bias)` pair per layer.
#[derive(Debug, Clone)]
pub struct NetGrads {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl NetGrads {
    /// Zero gradients shaped like `net`.
    pub fn zeros_like(net: &DenseNet) -> Self {
        NetGrads {
            weights: net
                .layers
                .iter()
                .map(|l| Array2::zeros(l.weights.dim()))
                .collect(),
            biases: net.layers.iter().map(|l| Array1::zeros(l.bias.len())).collect(),
        }
    }

    /// Accumulate `other` scaled by `scale`.
    pub fn add_scaled(&mut self, other: &NetGrads, scale: f64) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            a.scaled_add(scale, b);
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            a.scaled_add(scale, b);
        }
    }

    /// Flatten into one vector, matching [`DenseNet::params_flat`] order.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter().copied());
            out.extend(b.iter().copied());
        }
        out
    }
}

impl DenseNet {
    /// Build a network with Glorot-uniform weights and zero biases.
    ///
    /// `dims` lists the layer sizes including input and output, so
    /// `dims.len() >= 2` and `activations.len() == dims.len() - 1`. The same
    /// `(dims, activations, seed)` triple always produces bit-identical
    /// parameters.
    pub fn new(dims: &[usize], activations: &[Activation], seed: u64) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::InvalidConfig(
                "a network needs at least an input and an output dimension".into(),
            ));
        }
        if let Some(&zero) = dims.iter().find(|&&d| d == 0) {
            return Err(Error::InvalidConfig(format!(
                "layer dimensions must be positive, got {zero}"
            )));
        }
        if activations.len() != dims.len() - 1 {
            return Err(Error::InvalidConfig(format!(
                "{} layer dims require {} activations, got {}",
                dims.len(),
                dims.len() - 1,
                activations.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for (l, window) in dims.windows(2).enumerate() {
            let (fan_in, fan_out) = (window[0], window[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let mut weights = Array2::zeros((fan_out, fan_in));
            for r in 0..fan_out {
                for c in 0..fan_in {
                    weights[(r, c)] = rng.random_range(-limit..limit);
                }
            }
            layers.push(Layer {
                weights,
                bias: Array1::zeros(fan_out),
                activation: activations[l],
            });
        }
        Ok(DenseNet { layers })
    }

    /// Assemble a network from explicit layers, checking that they chain.
    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidConfig("a network needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].output_dim() != pair[1].input_dim() {
                return Err(Error::ShapeMismatch(format!(
                    "layer with {} outputs feeds a layer expecting {} inputs",
                    pair[0].output_dim(),
                    pair[1].input_dim()
                )));
            }
        }
        for (l, layer) in layers.iter().enumerate() {
            if layer.bias.len() != layer.output_dim() {
                return Err(Error::ShapeMismatch(format!(
                    "layer {l} has {} outputs but {} biases",
                    layer.output_dim(),
                    layer.bias.len()
                )));
            }
            if layer.weights.iter().chain(layer.bias.iter()).any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    context: format!("parameters of layer {l}"),
                });
            }
        }
        Ok(DenseNet { layers })
    }

    /// The layers, in order.
    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Input dimension of the first layer.
    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    /// Output dimension of the last layer.
    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("validated non-empty").output_dim()
    }

    /// Layer size list `[in, hidden…, out]`.
    pub fn dims(&self) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.layers.len() + 1);
        dims.push(self.input_dim());
        dims.extend(self.layers.iter().map(Layer::output_dim));
        dims
    }

    /// Activation tags, one per layer.
    pub fn activations(&self) -> Vec<Activation> {
        self.layers.iter().map(|l| l.activation).collect()
    }

    /// Total number of parameters (weights plus biases).
    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    /// Evaluate the network. Pure: identical inputs give bit-identical
    /// outputs.
    pub fn forward(&self, input: ArrayView1<f64>) -> Result<Array1<f64>> {
        let (output, _) = self.forward_trace(input)?;
        Ok(output)
    }

    /// Evaluate the network and keep the intermediates needed by
    /// [`DenseNet::backward`].
    pub fn forward_trace(&self, input: ArrayView1<f64>) -> Result<(Array1<f64>, ForwardTrace)> {
        if input.len() != self.input_dim() {
            return Err(Error::ShapeMismatch(format!(
                "network expects {} inputs, got {}",
                self.input_dim(),
                input.len()
            )));
        }
        let mut layer_inputs = Vec::with_capacity(self.layers.len());
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        let mut current = input.to_owned();
        for (l, layer) in self.layers.iter().enumerate() {
            let pre = layer.weights.dot(&current) + &layer.bias;
            if pre.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    context: format!("pre-activation of layer {l}"),
                });
            }
            layer_inputs.push(current);
            current = pre.mapv(|x| layer.activation.apply(x));
            pre_activations.push(pre);
        }
        Ok((
            current,
            ForwardTrace {
                layer_inputs,
                pre_activations,
            },
        ))
    }

    /// Reverse-mode pass: given `d loss / d output`, return the parameter
    /// gradients and `d loss / d input` for the forward pass that produced
    /// `trace`.
    pub fn backward(
        &self,
        trace: &ForwardTrace,
        upstream: ArrayView1<f64>,
    ) -> Result<(NetGrads, Array1<f64>)> {
        if trace.layer_inputs.len() != self.layers.len() {
            return Err(Error::ShapeMismatch(format!(
                "trace covers {} layers but the network has {}",
                trace.layer_inputs.len(),
                self.layers.len()
            )));
        }
        if upstream.len() != self.output_dim() {
            return Err(Error::ShapeMismatch(format!(
                "upstream gradient has {} entries but the network outputs {}",
                upstream.len(),
                self.output_dim()
            )));
        }
        let mut grads = NetGrads::zeros_like(self);
        let mut delta = upstream.to_owned();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let pre = &trace.pre_activations[l];
            let input = &trace.layer_inputs[l];
            if pre.len() != layer.output_dim() || input.len() != layer.input_dim() {
                return Err(Error::ShapeMismatch(format!(
                    "trace does not match layer {l}: {}-dim input, {}-dim pre-activation",
                    input.len(),
                    pre.len()
                )));
            }
            let dpre: Array1<f64> = delta
                .iter()
                .zip(pre.iter())
                .map(|(&d, &p)| d * layer.activation.derivative(p))
                .collect();
            for r in 0..layer.output_dim() {
                let g = dpre[r];
                for c in 0..layer.input_dim() {
                    grads.weights[l][(r, c)] = g * input[c];
                }
            }
            grads.biases[l].assign(&dpre);
            delta = layer.weights.t().dot(&dpre);
        }
        Ok((grads, delta))
    }

    /// All parameters flattened layer by layer, weights row-major, then bias.
    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for layer in &self.layers {
            out.extend(layer.weights.iter().copied());
            out.extend(layer.bias.iter().copied());
        }
        out
    }

    /// Overwrite all parameters from a flat vector (inverse of
    /// [`DenseNet::params_flat`]).
    pub fn set_params_flat(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(Error::ShapeMismatch(format!(
                "network has {} parameters, got {}",
                self.num_params(),
                params.len()
            )));
        }
        let mut offset = 0;
        for layer in &mut self.layers {
            for w in layer.weights.iter_mut() {
                *w = params[offset];
                offset += 1;
            }
            for b in layer.bias.iter_mut() {
                *b = params[offset];
                offset += 1;
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

/// Adam optimizer state. The update is functional — [`adam_step`] consumes
/// nothing and returns the new parameters and state — so callers can replay
/// or fork an optimization deterministically.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    /// Completed steps; bias correction uses `step + 1` on the next call.
    pub step: u64,
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    /// Fresh state with the standard moment decays (0.9, 0.999) and ε=1e-8.
    pub fn new(n_params: usize, learning_rate: f64) -> Self {
        AdamState {
            step: 0,
            first_moment: vec![0.0; n_params],
            second_moment: vec![0.0; n_params],
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// One Adam update with bias correction. Returns the new parameters and
/// state, leaving the inputs untouched.
pub fn adam_step(params: &[f64], grads: &[f64], state: &AdamState) -> Result<(Vec<f64>, AdamState)> {
    if params.len() != grads.len() || params.len() != state.first_moment.len() {
        return Err(Error::ShapeMismatch(format!(
            "adam_step got {} params, {} grads, state for {}",
            params.len(),
            grads.len(),
            state.first_moment.len()
        )));
    }
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite {
            context: "gradient passed to adam_step".into(),
        });
    }
    let mut next = state.clone();
    next.step = state.step + 1;
    let t = next.step as i32;
    let bias1 = 1.0 - state.beta1.powi(t);
    let bias2 = 1.0 - state.beta2.powi(t);
    let mut new_params = params.to_vec();
    for i in 0..params.len() {
        let m = state.beta1 * state.first_moment[i] + (1.0 - state.beta1) * grads[i];
        let v = state.beta2 * state.second_moment[i] + (1.0 - state.beta2) * grads[i] * grads[i];
        next.first_moment[i] = m;
        next.second_moment[i] = v;
        let m_hat = m / bias1;
        let v_hat = v / bias2;
        new_params[i] -= state.learning_rate * m_hat / (v_hat.sqrt() + state.epsilon);
    }
    Ok((new_params, next))
}

// ---------------------------------------------------------------------------
// Gradient checking
// ---------------------------------------------------------------------------

/// Central finite-difference gradient of a scalar function of a parameter
/// vector. The step for coordinate `i` is `step * max(1, |params[i]|)`.
pub fn finite_difference_gradient<F>(f: F, params: &[f64], step: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    let mut grad = vec![0.0; params.len()];
    let mut work = params.to_vec();
    for i in 0..params.len() {
        let h = step * params[i].abs().max(1.0);
        let original = work[i];
        work[i] = original + h;
        let plus = f(&work)?;
        work[i] = original - h;
        let minus = f(&work)?;
        work[i] = original;
        grad[i] = (plus - minus) / (2.0 * h);
    }
    Ok(grad)
}

/// Largest elementwise relative error between two gradients, with an absolute
/// floor so near-zero coordinates compare absolutely: the per-coordinate
/// error is `|a - n| / max(|a|, |n|, 1)`.
pub fn max_relative_gradient_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(1.0))
        .fold(0.0, f64::max)
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

/// Training provenance stored alongside the parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetMeta {
    /// Seed the parameters were initialized from.
    pub seed: u64,
    /// Number of optimizer steps applied since initialization.
    pub training_step: u64,
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    dims: Vec<usize>,
    activations: Vec<Activation>,
    seed: u64,
    training_step: u64,
}

/// Serialize parameters as little-endian f64 bytes in
/// [`DenseNet::params_flat`] order.
pub fn params_to_bytes(net: &DenseNet) -> Vec<u8> {
    let params = net.params_flat();
    let mut bytes = Vec::with_capacity(params.len() * 8);
    for p in params {
        bytes.extend_from_slice(&p.to_le_bytes());
    }
    bytes
}

/// Rebuild a network from architecture plus a parameter blob written by
/// [`params_to_bytes`].
pub fn params_from_bytes(
    dims: &[usize],
    activations: &[Activation],
    bytes: &[u8],
) -> Result<DenseNet> {
    let mut net = DenseNet::new(dims, activations, 0)?;
    let expected = net.num_params() * 8;
    if bytes.len() != expected {
        return Err(Error::ShapeMismatch(format!(
            "parameter blob holds {} bytes, architecture needs {expected}",
            bytes.len()
        )));
    }
    let params: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunks_exact(8)")))
        .collect();
    if params.iter().any(|p| !p.is_finite()) {
        return Err(Error::NonFinite {
            context: "checkpoint parameter blob".into(),
        });
    }
    net.set_params_flat(&params)?;
    Ok(net)
}

/// Write a checkpoint: one line of JSON (dims, activations, seed, training
/// step), a newline, then the raw little-endian parameter blob. The encoding
/// has no timestamps or platform-dependent fields, so saving the same network
/// twice produces identical bytes.
pub fn write_checkpoint(net: &DenseNet, meta: &NetMeta, path: &Path) -> Result<()> {
    let header = CheckpointHeader {
        dims: net.dims(),
        activations: net.activations(),
        seed: meta.seed,
        training_step: meta.training_step,
    };
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let header_line = serde_json::to_string(&header).map_err(|e| Error::json(path, e))?;
    file.write_all(header_line.as_bytes())
        .and_then(|_| file.write_all(b"\n"))
        .and_then(|_| file.write_all(&params_to_bytes(net)))
        .map_err(|e| Error::io(path, e))
}

/// Read a checkpoint written by [`write_checkpoint`].
pub fn read_checkpoint(path: &Path) -> Result<(DenseNet, NetMeta)> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let newline = bytes.iter().position(|&b| b == b'\n').ok_or_else(|| {
        Error::CorruptArtifact {
            path: path.to_path_buf(),
            message: "no header line".into(),
        }
    })?;
    let header: CheckpointHeader =
        serde_json::from_slice(&bytes[..newline]).map_err(|e| Error::json(path, e))?;
    let net = params_from_bytes(&header.dims, &header.activations, &bytes[newline + 1..])
        .map_err(|e| match e {
            Error::ShapeMismatch(msg) => Error::CorruptArtifact {
                path: path.to_path_buf(),
                message: msg,
            },
            other => other,
        })?;
    Ok((
        net,
        NetMeta {
            seed: header.seed,
            training_step: header.training_step,
        },
    ))
}
