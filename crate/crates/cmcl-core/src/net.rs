//! Batched dense feedforward networks with hand-derived backpropagation.
//!
//! A network is a chain of dense layers. Writing the input as `a_0` and the
//! activation entering layer `j` as `a_j`, each layer computes
//!
//! ```text
//! u_j = a_j + injected_j        (injected_j defaults to zero)
//! z_j = u_j * W_j^T + b_j
//! a_{j+1} = phi_j(z_j)
//! ```
//!
//! The optional injection is the hook used for cross-member feature sharing:
//! a caller may add an arbitrary feature matrix to the input of any layer,
//! and [`backward`] reports the gradient with respect to every injected
//! matrix so the caller can route it back to whoever produced the features.
//!
//! [`backward`] takes the gradient of the loss with respect to the final
//! layer's *pre-activation* (the logits). All losses in this crate hand out
//! logit gradients, which keeps the softmax Jacobian out of the hot path.

use rand::rngs::StdRng;
use rand::SeedableRng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Softmax,
    Identity,
}

impl Activation {
    fn apply_row(self, pre: &[f64], post: &mut [f64]) {
        match self {
            Activation::Relu => {
                for (p, &z) in post.iter_mut().zip(pre) {
                    *p = if z > 0.0 { z } else { 0.0 };
                }
            }
            Activation::Identity => post.copy_from_slice(pre),
            Activation::Softmax => softmax_row(pre, post),
        }
    }

    /// Derivative with respect to the pre-activation, given `z`.
    ///
    /// Softmax is excluded: the final-layer contract works on logit
    /// gradients, so its Jacobian is never materialized.
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
            Activation::Softmax => {
                unreachable!("softmax derivative is folded into the loss gradient")
            }
        }
    }
}

/// Numerically stable exp-normalize of one row.
fn softmax_row(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &z) in out.iter_mut().zip(logits) {
        let e = (z - max).exp();
        *o = e;
        sum += e;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub input_dim: usize,
    pub output_dim: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn new(input_dim: usize, output_dim: usize, activation: Activation) -> Self {
        LayerSpec {
            input_dim,
            output_dim,
            activation,
        }
    }
}

/// Validates a layer chain: non-empty, dims >= 1, consecutive dims chain,
/// softmax only as the final activation.
pub fn validate_specs(specs: &[LayerSpec]) -> Result<()> {
    if specs.is_empty() {
        return Err(Error::Config("layer spec list is empty".into()));
    }
    for (j, spec) in specs.iter().enumerate() {
        if spec.input_dim == 0 || spec.output_dim == 0 {
            return Err(Error::Config(format!("layer {j} has a zero dimension")));
        }
        if spec.activation == Activation::Softmax && j + 1 != specs.len() {
            return Err(Error::Config(format!(
                "softmax activation on layer {j} is only allowed on the final layer"
            )));
        }
        if j > 0 && specs[j - 1].output_dim != spec.input_dim {
            return Err(Error::Config(format!(
                "layer {} output dim {} does not chain into layer {j} input dim {}",
                j - 1,
                specs[j - 1].output_dim,
                spec.input_dim
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    /// Row-major `output_dim x input_dim`.
    pub weight: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl LayerParams {
    pub fn input_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.rows()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkParams {
    pub layers: Vec<LayerParams>,
}

impl NetworkParams {
    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty network").output_dim()
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.data().len() + l.bias.len())
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.is_finite() && l.bias.iter().all(|b| b.is_finite()))
    }
}

/// He-style initialization: zero-mean Gaussian weights with
/// `std = sqrt(2 / input_dim)`, zero biases. Deterministic given the seed.
pub fn init_params(specs: &[LayerSpec], seed: u64) -> Result<NetworkParams> {
    validate_specs(specs)?;
    let mut rng = StdRng::seed_from_u64(seed);
    let mut layers = Vec::with_capacity(specs.len());
    for spec in specs {
        let std = (2.0 / spec.input_dim as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("positive std");
        let data: Vec<f64> = (0..spec.output_dim * spec.input_dim)
            .map(|_| normal.sample(&mut rng))
            .collect();
        layers.push(LayerParams {
            weight: Matrix::from_vec(spec.output_dim, spec.input_dim, data)?,
            bias: vec![0.0; spec.output_dim],
            activation: spec.activation,
        });
    }
    Ok(NetworkParams { layers })
}

/// A feature matrix added to the input of layer `layer`.
#[derive(Debug, Clone)]
pub struct Injection<'a> {
    pub layer: usize,
    pub features: &'a Matrix,
}

/// Everything the forward pass computed, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// `a_0`, the raw batch input.
    pub input: Matrix,
    /// `u_j`: the effective input of layer `j` (own activation + injection).
    pub layer_inputs: Vec<Matrix>,
    /// `z_j`: pre-activations per layer.
    pub pre_activations: Vec<Matrix>,
    /// `a_{j+1}`: post-activations per layer; the last one is the network
    /// output (a row-stochastic distribution under a softmax head).
    pub post_activations: Vec<Matrix>,
    /// Layers that received an injection, in ascending order.
    pub injected_layers: Vec<usize>,
}

impl ForwardTrace {
    pub fn batch_size(&self) -> usize {
        self.input.rows()
    }

    /// Final post-activation; the predictive distribution for softmax heads.
    pub fn output(&self) -> &Matrix {
        self.post_activations.last().expect("non-empty network")
    }

    /// Post-activation `a_k` (`k = 0` is the input).
    pub fn activation(&self, k: usize) -> &Matrix {
        if k == 0 {
            &self.input
        } else {
            &self.post_activations[k - 1]
        }
    }
}

/// Runs the batch through the network, adding each injection to the input of
/// its target layer.
pub fn forward(params: &NetworkParams, inputs: &Matrix, injections: &[Injection]) -> Result<ForwardTrace> {
    let n_layers = params.layers.len();
    if inputs.cols() != params.input_dim() {
        return Err(Error::Shape(format!(
            "batch has {} columns, network expects {}",
            inputs.cols(),
            params.input_dim()
        )));
    }
    if !inputs.is_finite() {
        return Err(Error::Input("batch contains non-finite values".into()));
    }
    let mut by_layer: Vec<Option<&Matrix>> = vec![None; n_layers];
    for inj in injections {
        if inj.layer >= n_layers {
            return Err(Error::Shape(format!(
                "injection targets layer {} but network has {n_layers} layers",
                inj.layer
            )));
        }
        let expect = params.layers[inj.layer].input_dim();
        if inj.features.rows() != inputs.rows() || inj.features.cols() != expect {
            return Err(Error::Shape(format!(
                "injection at layer {} has shape {}x{}, expected {}x{expect}",
                inj.layer,
                inj.features.rows(),
                inj.features.cols(),
                inputs.rows()
            )));
        }
        if !inj.features.is_finite() {
            return Err(Error::Input(format!(
                "injection at layer {} contains non-finite values",
                inj.layer
            )));
        }
        if by_layer[inj.layer].replace(inj.features).is_some() {
            return Err(Error::Input(format!(
                "duplicate injection at layer {}",
                inj.layer
            )));
        }
    }

    let batch = inputs.rows();
    let mut layer_inputs = Vec::with_capacity(n_layers);
    let mut pre_activations = Vec::with_capacity(n_layers);
    let mut post_activations = Vec::with_capacity(n_layers);
    let mut current = inputs.clone();

    for (j, layer) in params.layers.iter().enumerate() {
        let mut effective = current;
        if let Some(features) = by_layer[j] {
            effective.add_assign(features)?;
        }

        let out_dim = layer.output_dim();
        let in_dim = layer.input_dim();
        let mut pre = Matrix::zeros(batch, out_dim);
        for b in 0..batch {
            let u = effective.row(b);
            let z = pre.row_mut(b);
            for o in 0..out_dim {
                let w = &layer.weight.row(o)[..in_dim];
                let mut sum = layer.bias[o];
                for (wi, ui) in w.iter().zip(u) {
                    sum += wi * ui;
                }
                z[o] = sum;
            }
        }

        let mut post = Matrix::zeros(batch, out_dim);
        for b in 0..batch {
            layer.activation.apply_row(pre.row(b), post.row_mut(b));
        }

        layer_inputs.push(effective);
        pre_activations.push(pre);
        current = post.clone();
        post_activations.push(post);
    }

    let injected_layers = (0..n_layers).filter(|&j| by_layer[j].is_some()).collect();
    Ok(ForwardTrace {
        input: inputs.clone(),
        layer_inputs,
        pre_activations,
        post_activations,
        injected_layers,
    })
}

#[derive(Debug, Clone)]
pub struct LayerGrads {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

/// Gradients for every parameter of one network, plus the gradients with
/// respect to the batch input and to any injected feature matrices.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub layers: Vec<LayerGrads>,
    pub input: Matrix,
    /// `(layer, gradient)` for each injection present in the trace.
    pub injections: Vec<(usize, Matrix)>,
}

impl Gradients {
    pub fn zeros_like(params: &NetworkParams, batch: usize) -> Self {
        Gradients {
            layers: params
                .layers
                .iter()
                .map(|l| LayerGrads {
                    weight: Matrix::zeros(l.output_dim(), l.input_dim()),
                    bias: vec![0.0; l.output_dim()],
                })
                .collect(),
            input: Matrix::zeros(batch, params.input_dim()),
            injections: Vec::new(),
        }
    }

    /// Accumulates another gradient set's parameter and input gradients.
    pub fn add_assign(&mut self, other: &Gradients) -> Result<()> {
        if self.layers.len() != other.layers.len() {
            return Err(Error::Shape("gradient layer counts differ".into()));
        }
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight.add_assign(&b.weight)?;
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                *x += y;
            }
        }
        self.input.add_assign(&other.input)?;
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        for layer in &mut self.layers {
            layer.weight.scale(factor);
            for b in &mut layer.bias {
                *b *= factor;
            }
        }
        self.input.scale(factor);
        for (_, inj) in &mut self.injections {
            inj.scale(factor);
        }
    }

    pub fn injection_grad(&self, layer: usize) -> Option<&Matrix> {
        self.injections
            .iter()
            .find(|(j, _)| *j == layer)
            .map(|(_, g)| g)
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.is_finite() && l.bias.iter().all(|b| b.is_finite()))
    }
}

fn check_trace(trace: &ForwardTrace, params: &NetworkParams) -> Result<()> {
    if trace.layer_inputs.len() != params.layers.len() {
        return Err(Error::Shape(format!(
            "trace has {} layers, params have {}",
            trace.layer_inputs.len(),
            params.layers.len()
        )));
    }
    for (j, layer) in params.layers.iter().enumerate() {
        if trace.layer_inputs[j].cols() != layer.input_dim()
            || trace.pre_activations[j].cols() != layer.output_dim()
        {
            return Err(Error::Shape(format!("trace/params mismatch at layer {j}")));
        }
    }
    Ok(())
}

/// Reverse-mode pass from the gradient with respect to the final
/// pre-activation (`output_grad`, shaped like the network output).
pub fn backward(params: &NetworkParams, trace: &ForwardTrace, output_grad: &Matrix) -> Result<Gradients> {
    check_trace(trace, params)?;
    let last = params.layers.len() - 1;
    if output_grad.rows() != trace.batch_size() || output_grad.cols() != params.output_dim() {
        return Err(Error::Shape(format!(
            "output gradient is {}x{}, expected {}x{}",
            output_grad.rows(),
            output_grad.cols(),
            trace.batch_size(),
            params.output_dim()
        )));
    }
    backprop_range(params, trace, last, output_grad.clone())
}

/// Reverse-mode pass that starts at post-activation `a_k` instead of the
/// output. Only layers `0..k` receive parameter gradients; the rest stay
/// zero. Used to push feature-sharing gradients into a peer's lower layers.
pub fn backward_from_activation(
    params: &NetworkParams,
    trace: &ForwardTrace,
    k: usize,
    activation_grad: &Matrix,
) -> Result<Gradients> {
    check_trace(trace, params)?;
    if k == 0 || k > params.layers.len() {
        return Err(Error::Shape(format!(
            "activation index {k} out of range for {} layers",
            params.layers.len()
        )));
    }
    let entry = k - 1; // layer whose post-activation is a_k
    if activation_grad.rows() != trace.batch_size()
        || activation_grad.cols() != params.layers[entry].output_dim()
    {
        return Err(Error::Shape(format!(
            "activation gradient is {}x{}, expected {}x{}",
            activation_grad.rows(),
            activation_grad.cols(),
            trace.batch_size(),
            params.layers[entry].output_dim()
        )));
    }
    // dz_entry = da_{entry+1} * phi'(z_entry)
    let mut dz = activation_grad.clone();
    apply_activation_derivative(&mut dz, &trace.pre_activations[entry], params.layers[entry].activation);
    backprop_range(params, trace, entry, dz)
}

fn apply_activation_derivative(dz: &mut Matrix, pre: &Matrix, activation: Activation) {
    for (d, &z) in dz.data_mut().iter_mut().zip(pre.data()) {
        *d *= activation.derivative(z);
    }
}

/// Shared backward loop: `dz` is the gradient with respect to the
/// pre-activation of layer `top`; walks down to layer 0.
fn backprop_range(
    params: &NetworkParams,
    trace: &ForwardTrace,
    top: usize,
    mut dz: Matrix,
) -> Result<Gradients> {
    let batch = trace.batch_size();
    let mut grads = Gradients::zeros_like(params, batch);

    for j in (0..=top).rev() {
        let layer = &params.layers[j];
        let u = &trace.layer_inputs[j];
        let out_dim = layer.output_dim();
        let in_dim = layer.input_dim();

        let g = &mut grads.layers[j];
        for b in 0..batch {
            let dz_row = dz.row(b);
            let u_row = u.row(b);
            for o in 0..out_dim {
                let d = dz_row[o];
                if d == 0.0 {
                    continue;
                }
                g.bias[o] += d;
                let w_row = g.weight.row_mut(o);
                for (wi, ui) in w_row.iter_mut().zip(u_row) {
                    *wi += d * ui;
                }
            }
        }

        // du_j = dz_j * W_j
        let mut du = Matrix::zeros(batch, in_dim);
        for b in 0..batch {
            let dz_row = dz.row(b);
            let du_row = du.row_mut(b);
            for o in 0..out_dim {
                let d = dz_row[o];
                if d == 0.0 {
                    continue;
                }
                let w_row = layer.weight.row(o);
                for (dui, wi) in du_row.iter_mut().zip(w_row) {
                    *dui += d * wi;
                }
            }
        }

        if trace.injected_layers.contains(&j) {
            grads.injections.push((j, du.clone()));
        }

        if j == 0 {
            grads.input = du;
        } else {
            // dz_{j-1} = du_j * phi'(z_{j-1})
            apply_activation_derivative(&mut du, &trace.pre_activations[j - 1], params.layers[j - 1].activation);
            dz = du;
        }
    }
    grads.injections.sort_by_key(|(j, _)| *j);
    Ok(grads)
}
