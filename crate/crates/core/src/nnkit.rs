//! Minimal dense-network substrate: exact-gradient backpropagation,
//! softmax cross-entropy, gradient reversal and optimizers.
//!
//! Everything is `f64` and deterministic given the seed. Weights are stored
//! row-major, `out_dim x in_dim`.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{AudError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Sigmoid,
    Linear,
    Softmax,
}

impl Activation {
    pub fn tag(self) -> u8 {
        match self {
            Activation::Sigmoid => 0,
            Activation::Linear => 1,
            Activation::Softmax => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(Activation::Sigmoid),
            1 => Ok(Activation::Linear),
            2 => Ok(Activation::Softmax),
            t => Err(AudError::Parameter(format!("unknown activation tag {t}"))),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LayerSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn new(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        Self { in_dim, out_dim, activation }
    }
}

#[derive(Debug, Clone)]
pub struct Layer {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
}

#[derive(Debug, Clone)]
pub struct NetParams {
    pub layers: Vec<Layer>,
}

/// Per-layer activations saved during the forward pass; enough for an exact
/// backward pass.
#[derive(Debug, Clone)]
pub struct NetCache {
    pub input: Vec<f64>,
    /// Post-activation output of each layer.
    pub outputs: Vec<Vec<f64>>,
}

impl NetCache {
    /// Output of layer `i` (post-activation).
    pub fn layer_output(&self, i: usize) -> &[f64] {
        &self.outputs[i]
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|&e| e / sum).collect()
}

pub fn log_sum_exp(vals: &[f64]) -> f64 {
    let max = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max.is_infinite() {
        return max;
    }
    max + vals.iter().map(|&v| (v - max).exp()).sum::<f64>().ln()
}

impl NetParams {
    /// Glorot-uniform initialization, seeded.
    pub fn init(specs: &[LayerSpec], rng: &mut ChaCha8Rng) -> Result<Self> {
        let mut layers = Vec::with_capacity(specs.len());
        for (i, spec) in specs.iter().enumerate() {
            if spec.in_dim == 0 || spec.out_dim == 0 {
                return Err(AudError::Parameter("layer dims must be >= 1".into()));
            }
            if i > 0 && specs[i - 1].out_dim != spec.in_dim {
                return Err(AudError::DimMismatch {
                    expected: specs[i - 1].out_dim,
                    got: spec.in_dim,
                });
            }
            let bound = (6.0 / (spec.in_dim + spec.out_dim) as f64).sqrt();
            let weights = (0..spec.in_dim * spec.out_dim)
                .map(|_| rng.gen_range(-bound..bound))
                .collect();
            layers.push(Layer {
                weights,
                bias: vec![0.0; spec.out_dim],
                in_dim: spec.in_dim,
                out_dim: spec.out_dim,
                activation: spec.activation,
            });
        }
        Ok(Self { layers })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    weights: vec![0.0; l.weights.len()],
                    bias: vec![0.0; l.bias.len()],
                    in_dim: l.in_dim,
                    out_dim: l.out_dim,
                    activation: l.activation,
                })
                .collect(),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.in_dim)
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_dim)
    }

    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, NetCache)> {
        if input.len() != self.in_dim() {
            return Err(AudError::DimMismatch { expected: self.in_dim(), got: input.len() });
        }
        let mut outputs = Vec::with_capacity(self.layers.len());
        let mut cur = input.to_vec();
        for layer in &self.layers {
            let mut pre = layer.bias.clone();
            for (o, p) in pre.iter_mut().enumerate() {
                let row = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                *p += row.iter().zip(&cur).map(|(w, x)| w * x).sum::<f64>();
            }
            let post = match layer.activation {
                Activation::Sigmoid => pre.iter().map(|&v| sigmoid(v)).collect(),
                Activation::Linear => pre,
                Activation::Softmax => softmax(&pre),
            };
            outputs.push(post.clone());
            cur = post;
        }
        Ok((cur, NetCache { input: input.to_vec(), outputs }))
    }

    /// Exact gradients of the scalar loss whose gradient w.r.t. the network
    /// output is `output_grad`. Returns `(param_grads, input_grad)`.
    pub fn backward(&self, cache: &NetCache, output_grad: &[f64]) -> (NetParams, Vec<f64>) {
        let mut grads = self.zeros_like();
        let mut delta = output_grad.to_vec();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let post = &cache.outputs[i];
            // Gradient w.r.t. the pre-activation.
            let dpre: Vec<f64> = match layer.activation {
                Activation::Sigmoid => {
                    delta.iter().zip(post).map(|(&d, &y)| d * y * (1.0 - y)).collect()
                }
                Activation::Linear => delta.clone(),
                Activation::Softmax => {
                    // J^T d with J = diag(y) - y y^T
                    let dot: f64 = delta.iter().zip(post).map(|(&d, &y)| d * y).sum();
                    delta.iter().zip(post).map(|(&d, &y)| y * (d - dot)).collect()
                }
            };
            let prev: &[f64] = if i == 0 { &cache.input } else { &cache.outputs[i - 1] };
            let g = &mut grads.layers[i];
            for (o, &dp) in dpre.iter().enumerate() {
                g.bias[o] += dp;
                let row = &mut g.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                for (w, &x) in row.iter_mut().zip(prev) {
                    *w += dp * x;
                }
            }
            let mut dprev = vec![0.0; layer.in_dim];
            for (o, &dp) in dpre.iter().enumerate() {
                let row = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                for (dx, &w) in dprev.iter_mut().zip(row) {
                    *dx += dp * w;
                }
            }
            delta = dprev;
        }
        (grads, delta)
    }

    /// Elementwise `self += scale * other`. Shapes must match.
    pub fn add_scaled(&mut self, other: &NetParams, scale: f64) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.weights.iter_mut().zip(&b.weights) {
                *x += scale * y;
            }
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                *x += scale * y;
            }
        }
    }

    pub fn scale(&mut self, scale: f64) {
        for l in self.layers.iter_mut() {
            for x in l.weights.iter_mut() {
                *x *= scale;
            }
            for x in l.bias.iter_mut() {
                *x *= scale;
            }
        }
    }

    /// Visits every parameter as a flat slice per layer, weights then bias.
    /// Used by checkpointing and the finite-difference tests.
    pub fn for_each_param_mut(&mut self, mut f: impl FnMut(&mut f64)) {
        for l in self.layers.iter_mut() {
            for x in l.weights.iter_mut() {
                f(x);
            }
            for x in l.bias.iter_mut() {
                f(x);
            }
        }
    }

    pub fn for_each_param(&self, mut f: impl FnMut(f64)) {
        for l in &self.layers {
            for &x in &l.weights {
                f(x);
            }
            for &x in &l.bias {
                f(x);
            }
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }
}

/// Cross-entropy loss over softmax(logits) and its gradient w.r.t. the logits.
pub fn softmax_xent(logits: &[f64], target: usize) -> (f64, Vec<f64>) {
    assert!(target < logits.len(), "target {} out of range {}", target, logits.len());
    let probs = softmax(logits);
    let loss = -probs[target].max(1e-300).ln();
    let mut grad = probs;
    grad[target] -= 1.0;
    (loss, grad)
}

/// Gradient reversal: identity on the forward pass, `-lambda * grad` on the
/// backward pass.
pub fn grl_backward(upstream_grad: &[f64], lambda: f64) -> Vec<f64> {
    upstream_grad.iter().map(|&g| -lambda * g).collect()
}

#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: NetParams,
    pub v: NetParams,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: &NetParams) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Standard Adam update with bias correction.
pub fn adam_step(params: &mut NetParams, grads: &NetParams, state: &mut AdamState, lr: f64) {
    state.step += 1;
    let t = state.step as f64;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let bc1 = 1.0 - b1.powf(t);
    let bc2 = 1.0 - b2.powf(t);
    for ((pl, gl), (ml, vl)) in params
        .layers
        .iter_mut()
        .zip(&grads.layers)
        .zip(state.m.layers.iter_mut().zip(state.v.layers.iter_mut()))
    {
        let upd = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let mhat = *m / bc1;
            let vhat = *v / bc2;
            *p -= lr * mhat / (vhat.sqrt() + eps);
        };
        for ((p, &g), (m, v)) in pl
            .weights
            .iter_mut()
            .zip(&gl.weights)
            .zip(ml.weights.iter_mut().zip(vl.weights.iter_mut()))
        {
            upd(p, g, m, v);
        }
        for ((p, &g), (m, v)) in
            pl.bias.iter_mut().zip(&gl.bias).zip(ml.bias.iter_mut().zip(vl.bias.iter_mut()))
        {
            upd(p, g, m, v);
        }
    }
}

/// Plain SGD: `theta <- theta - lr * grad`.
pub fn sgd_step(params: &mut NetParams, grads: &NetParams, lr: f64) {
    params.add_scaled(grads, -lr);
}

/// Exponentially decayed learning rate: `lr0 * (lr_end/lr0)^(t/total)`.
pub fn exp_decay_lr(lr0: f64, lr_end: f64, step: u64, total_steps: u64) -> f64 {
    if total_steps == 0 {
        return lr0;
    }
    let frac = step as f64 / total_steps as f64;
    lr0 * (lr_end / lr0).powf(frac)
}
