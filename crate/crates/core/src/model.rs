//! Dense softmax classifier with hand-derived backpropagation.
//!
//! Hidden layers use `tanh`; the output layer is a softmax over the classes.
//! The loss is the mean negative log-likelihood, so gradient *descent*
//! lowers it.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{ClassDistribution, LabeledDataset};
use crate::error::{Error, Result};
use crate::seed;

/// Fully connected layer. `weights` is row-major `outputs × inputs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    fn values(&self) -> impl Iterator<Item = &f64> {
        self.weights.iter().chain(&self.bias)
    }

    fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights.iter_mut().chain(&mut self.bias)
    }

    pub fn norm(&self) -> f64 {
        self.values().map(|v| v * v).sum::<f64>().sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    layers: Vec<DenseLayer>,
}

/// `∂loss/∂params`, laid out exactly like the [`ModelParams`] it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GradientSet(ModelParams);

fn check_dims(layer_dims: &[usize]) -> Result<()> {
    if layer_dims.len() < 2 {
        return Err(Error::config("layer_dims", "need at least input and output sizes"));
    }
    if layer_dims.contains(&0) {
        return Err(Error::config("layer_dims", "every layer size must be positive"));
    }
    Ok(())
}

/// Seeded Gaussian initialization with standard deviation
/// `scale / sqrt(fan_in)` and zero biases.
pub fn init_params(layer_dims: &[usize], seed: u64, scale: f64) -> Result<ModelParams> {
    check_dims(layer_dims)?;
    if !(scale.is_finite() && scale > 0.0) {
        return Err(Error::config("init_scale", "must be positive and finite"));
    }
    let mut rng = seed::rng(seed);
    let mut params = ModelParams::zeros(layer_dims)?;
    for layer in &mut params.layers {
        let std = scale / (layer.inputs as f64).sqrt();
        for w in &mut layer.weights {
            *w = std * rng.sample::<f64, _>(StandardNormal);
        }
    }
    Ok(params)
}

impl ModelParams {
    pub fn zeros(layer_dims: &[usize]) -> Result<Self> {
        check_dims(layer_dims)?;
        Ok(Self {
            layers: layer_dims.windows(2).map(|w| DenseLayer::zeros(w[0], w[1])).collect(),
        })
    }

    pub fn from_layers(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::config("layer_dims", "no layers"));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.weights.len() != l.inputs * l.outputs || l.bias.len() != l.outputs || l.inputs == 0 || l.outputs == 0 {
                return Err(Error::Shape(format!("layer {i} has inconsistent buffers")));
            }
            if i > 0 && layers[i - 1].outputs != l.inputs {
                return Err(Error::Shape(format!("layer {i} input {} != previous output", l.inputs)));
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    pub fn layer_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.layers[0].inputs];
        dims.extend(self.layers.iter().map(|l| l.outputs));
        dims
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn num_classes(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn layer_names(&self) -> Vec<String> {
        (0..self.layers.len()).map(|i| format!("dense_{i}")).collect()
    }

    /// All weights then biases, layer by layer.
    pub fn flatten(&self) -> Vec<f64> {
        self.layers.iter().flat_map(|l| l.values().copied()).collect()
    }

    /// Inverse of [`flatten`](Self::flatten), using `self` as the shape template.
    pub fn unflatten(&self, flat: &[f64]) -> Result<Self> {
        if flat.len() != self.num_params() {
            return Err(Error::Shape(format!("{} values for {} parameters", flat.len(), self.num_params())));
        }
        let mut out = self.clone();
        for (dst, src) in out.layers.iter_mut().flat_map(DenseLayer::values_mut).zip(flat) {
            *dst = *src;
        }
        Ok(out)
    }

    pub fn same_shape(&self, other: &ModelParams) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.inputs == b.inputs && a.outputs == b.outputs)
    }

    fn require_same_shape(&self, other: &ModelParams) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "parameter shapes {:?} and {:?}",
                self.layer_dims(),
                other.layer_dims()
            )))
        }
    }

    pub fn norm(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(DenseLayer::values)
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().flat_map(DenseLayer::values).all(|v| v.is_finite())
    }

    /// `self += alpha · other`.
    pub fn add_scaled(&mut self, other: &ModelParams, alpha: f64) -> Result<()> {
        self.require_same_shape(other)?;
        for (a, b) in self
            .layers
            .iter_mut()
            .flat_map(DenseLayer::values_mut)
            .zip(other.layers.iter().flat_map(DenseLayer::values))
        {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn scale(&mut self, alpha: f64) {
        for v in self.layers.iter_mut().flat_map(DenseLayer::values_mut) {
            *v *= alpha;
        }
    }

    /// `self − other`.
    pub fn difference(&self, other: &ModelParams) -> Result<ModelParams> {
        let mut d = self.clone();
        d.add_scaled(other, -1.0)?;
        Ok(d)
    }

    /// Euclidean distance between flattened parameter vectors.
    pub fn distance(&self, other: &ModelParams) -> Result<f64> {
        Ok(self.difference(other)?.norm())
    }
}

impl GradientSet {
    pub fn zeros_like(params: &ModelParams) -> Self {
        let mut z = params.clone();
        z.scale(0.0);
        GradientSet(z)
    }

    pub fn from_params(p: ModelParams) -> Self {
        GradientSet(p)
    }

    pub fn as_params(&self) -> &ModelParams {
        &self.0
    }

    pub fn into_params(self) -> ModelParams {
        self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.norm()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.0.flatten()
    }

    pub fn add_scaled(&mut self, other: &GradientSet, alpha: f64) -> Result<()> {
        self.0.add_scaled(&other.0, alpha)
    }

    pub fn scale(&mut self, alpha: f64) {
        self.0.scale(alpha)
    }
}

/// Reusable forward/backward buffers.
struct Workspace {
    /// `acts[0]` is the input, `acts[l + 1]` the output of layer `l`.
    acts: Vec<Vec<f64>>,
    delta: Vec<f64>,
    delta_prev: Vec<f64>,
}

impl Workspace {
    fn new(params: &ModelParams) -> Self {
        Self {
            acts: params.layer_dims().into_iter().map(|d| vec![0.0; d]).collect(),
            delta: Vec::new(),
            delta_prev: Vec::new(),
        }
    }

    /// Fills `acts`; the last entry holds softmax probabilities. Returns
    /// `log f_y` when a label is given.
    fn forward(&mut self, params: &ModelParams, x: &[f64], label: Option<usize>) -> f64 {
        self.acts[0].copy_from_slice(x);
        let last = params.layers.len() - 1;
        let mut log_py = 0.0;
        for (l, layer) in params.layers.iter().enumerate() {
            let (head, tail) = self.acts.split_at_mut(l + 1);
            let input = &head[l];
            let out = &mut tail[0];
            for (o, z) in out.iter_mut().enumerate() {
                let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                *z = layer.bias[o] + row.iter().zip(input).map(|(w, a)| w * a).sum::<f64>();
            }
            if l < last {
                for z in out.iter_mut() {
                    *z = z.tanh();
                }
            } else {
                let max = out.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for z in out.iter_mut() {
                    *z = (*z - max).exp();
                    sum += *z;
                }
                if let Some(y) = label {
                    // log-softmax from the shifted logit, before normalising.
                    log_py = out[y].ln() - sum.ln();
                }
                for z in out.iter_mut() {
                    *z /= sum;
                }
            }
        }
        log_py
    }

    /// Adds this example's gradient into `grad`. Call after `forward`.
    fn backward(&mut self, params: &ModelParams, label: usize, grad: &mut ModelParams) {
        let last = params.layers.len() - 1;
        self.delta.clear();
        self.delta.extend_from_slice(&self.acts[last + 1]);
        self.delta[label] -= 1.0;
        for l in (0..=last).rev() {
            let layer = &params.layers[l];
            let g = &mut grad.layers[l];
            let input = &self.acts[l];
            for (o, d) in self.delta.iter().enumerate() {
                g.bias[o] += d;
                let row = &mut g.weights[o * layer.inputs..(o + 1) * layer.inputs];
                for (gw, a) in row.iter_mut().zip(input) {
                    *gw += d * a;
                }
            }
            if l > 0 {
                self.delta_prev.clear();
                self.delta_prev.resize(layer.inputs, 0.0);
                for (o, d) in self.delta.iter().enumerate() {
                    let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                    for (dp, w) in self.delta_prev.iter_mut().zip(row) {
                        *dp += w * d;
                    }
                }
                for (dp, a) in self.delta_prev.iter_mut().zip(input) {
                    *dp *= 1.0 - a * a;
                }
                std::mem::swap(&mut self.delta, &mut self.delta_prev);
            }
        }
    }
}

fn check_input(params: &ModelParams, data: &LabeledDataset) -> Result<()> {
    if data.dim() != params.input_dim() {
        return Err(Error::Shape(format!(
            "features of dimension {} for a model expecting {}",
            data.dim(),
            params.input_dim()
        )));
    }
    if data.num_classes() > params.num_classes() {
        return Err(Error::Data(format!(
            "dataset has {} classes, model outputs {}",
            data.num_classes(),
            params.num_classes()
        )));
    }
    Ok(())
}

pub fn forward(params: &ModelParams, x: &[f64]) -> Result<ClassDistribution> {
    if x.len() != params.input_dim() {
        return Err(Error::Shape(format!("input of length {} for dimension {}", x.len(), params.input_dim())));
    }
    let mut ws = Workspace::new(params);
    ws.forward(params, x, None);
    Ok(ClassDistribution::new(ws.acts.pop().unwrap_or_default()).expect("softmax output lies on the simplex"))
}

/// Mean NLL and its gradient over the examples at `indices`. Summation runs
/// in the order given.
pub fn loss_and_grad_at(params: &ModelParams, data: &LabeledDataset, indices: &[usize]) -> Result<(f64, GradientSet)> {
    check_input(params, data)?;
    if indices.is_empty() {
        return Err(Error::Data("empty batch".into()));
    }
    let mut ws = Workspace::new(params);
    let mut grad = GradientSet::zeros_like(params);
    let mut loss = 0.0;
    for &i in indices {
        let y = data.label(i);
        loss -= ws.forward(params, data.row(i), Some(y));
        ws.backward(params, y, &mut grad.0);
    }
    let inv = 1.0 / indices.len() as f64;
    grad.scale(inv);
    Ok((loss * inv, grad))
}

pub fn loss_and_grad(params: &ModelParams, batch: &LabeledDataset) -> Result<(f64, GradientSet)> {
    let all: Vec<usize> = (0..batch.len()).collect();
    loss_and_grad_at(params, batch, &all)
}

pub fn mean_loss(params: &ModelParams, data: &LabeledDataset) -> Result<f64> {
    check_input(params, data)?;
    if data.is_empty() {
        return Err(Error::Data("empty dataset".into()));
    }
    let mut ws = Workspace::new(params);
    let total: f64 = (0..data.len())
        .map(|i| -ws.forward(params, data.row(i), Some(data.label(i))))
        .sum();
    Ok(total / data.len() as f64)
}

/// Gradient of the mean loss over the examples labelled `class`: the
/// empirical class-conditional expected gradient.
pub fn class_conditional_grad(params: &ModelParams, data: &LabeledDataset, class: usize) -> Result<GradientSet> {
    let idx = data.class_indices(class);
    if idx.is_empty() {
        return Err(Error::EmptyClass { class });
    }
    Ok(loss_and_grad_at(params, data, &idx)?.1)
}

/// Class-conditional gradients for every class in one pass over `data`.
/// Errors if any class in `0..num_classes` is absent.
pub fn class_conditional_grads(params: &ModelParams, data: &LabeledDataset) -> Result<Vec<GradientSet>> {
    check_input(params, data)?;
    let c = params.num_classes();
    let mut grads = vec![GradientSet::zeros_like(params); c];
    let mut counts = vec![0usize; c];
    let mut ws = Workspace::new(params);
    for i in 0..data.len() {
        let y = data.label(i);
        ws.forward(params, data.row(i), Some(y));
        ws.backward(params, y, &mut grads[y].0);
        counts[y] += 1;
    }
    for (class, (g, &n)) in grads.iter_mut().zip(&counts).enumerate() {
        if n == 0 {
            return Err(Error::EmptyClass { class });
        }
        g.scale(1.0 / n as f64);
    }
    Ok(grads)
}

/// `params − eta · grad`.
pub fn sgd_step(params: &ModelParams, grad: &GradientSet, eta: f64) -> Result<ModelParams> {
    if !(eta.is_finite() && eta > 0.0) {
        return Err(Error::config("eta", "learning rate must be positive"));
    }
    let mut next = params.clone();
    next.add_scaled(&grad.0, -eta)?;
    if !next.is_finite() {
        return Err(Error::Data("SGD step produced non-finite parameters".into()));
    }
    Ok(next)
}

/// Argmax of the softmax output, ties to the lowest class.
pub fn predict(params: &ModelParams, x: &[f64]) -> Result<usize> {
    Ok(argmax(forward(params, x)?.probs()))
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in v.iter().enumerate().skip(1) {
        if p > v[best] {
            best = i;
        }
    }
    best
}

/// Fraction of correctly classified examples.
pub fn evaluate(params: &ModelParams, test: &LabeledDataset) -> Result<f64> {
    check_input(params, test)?;
    if test.is_empty() {
        return Err(Error::Data("empty test set".into()));
    }
    let mut ws = Workspace::new(params);
    let last = ws.acts.len() - 1;
    let correct = (0..test.len())
        .filter(|&i| {
            ws.forward(params, test.row(i), None);
            argmax(&ws.acts[last]) == test.label(i)
        })
        .count();
    Ok(correct as f64 / test.len() as f64)
}
