//! Feedforward Q-network with rectifier hidden layers and a linear head.
//!
//! Parameters live in one flat buffer, layer by layer: the row-major weight
//! matrix (`out × in`) followed by the bias vector.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::plant::Action;
use crate::rng::SimRng;

#[derive(Debug, Clone, PartialEq)]
pub struct QNet {
    dims: Vec<usize>,
    params: Vec<f64>,
}

/// One Q-learning transition on network inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub input: Vec<f64>,
    pub action: Action,
    pub reward: f64,
    pub next_input: Vec<f64>,
}

/// Per-layer activations kept for backpropagation.
#[derive(Debug, Default, Clone)]
pub struct Activations {
    /// `layers[0]` is the input, `layers[i]` the post-activation output of layer `i`.
    layers: Vec<Vec<f64>>,
}

impl Activations {
    pub fn output(&self) -> &[f64] {
        self.layers.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut s: f64 = acc.iter().sum();
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

impl QNet {
    /// He-initialized network with the given layer widths (input first).
    pub fn new(dims: &[usize], rng: &mut SimRng) -> Self {
        assert!(dims.len() >= 2, "a network needs input and output widths");
        let mut net = QNet::zeros(dims);
        let mut offset = 0;
        for w in dims.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
            for p in &mut net.params[offset..offset + fan_in * fan_out] {
                *p = normal.sample(rng);
            }
            offset += fan_in * fan_out + fan_out;
        }
        net
    }

    pub fn zeros(dims: &[usize]) -> Self {
        let len = dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        QNet { dims: dims.to_vec(), params: vec![0.0; len] }
    }

    /// Uniform random parameters in `[-scale, scale]`.
    pub fn random_uniform(dims: &[usize], scale: f64, rng: &mut SimRng) -> Self {
        let mut net = QNet::zeros(dims);
        for p in &mut net.params {
            *p = rng.gen_range(-scale..=scale);
        }
        net
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_layers(&self) -> usize {
        self.dims.len() - 1
    }

    /// `(weights, bias)` of layer `l`.
    pub fn layer(&self, l: usize) -> (&[f64], &[f64]) {
        let (off, fan_in, fan_out) = self.layer_offset(l);
        let w = &self.params[off..off + fan_in * fan_out];
        let b = &self.params[off + fan_in * fan_out..off + fan_in * fan_out + fan_out];
        (w, b)
    }

    pub fn layer_mut(&mut self, l: usize) -> (&mut [f64], &mut [f64]) {
        let (off, fan_in, fan_out) = self.layer_offset(l);
        let (w, rest) = self.params[off..].split_at_mut(fan_in * fan_out);
        (w, &mut rest[..fan_out])
    }

    fn layer_offset(&self, l: usize) -> (usize, usize, usize) {
        let off = self.dims.windows(2).take(l).map(|w| w[0] * w[1] + w[1]).sum();
        (off, self.dims[l], self.dims[l + 1])
    }

    pub fn forward(&self, input: &[f64]) -> Vec<f64> {
        let mut acts = Activations::default();
        self.forward_cached(input, &mut acts);
        acts.layers.pop().unwrap_or_default()
    }

    pub fn forward_cached(&self, input: &[f64], acts: &mut Activations) {
        assert_eq!(input.len(), self.input_dim(), "input width mismatch");
        let layers = self.num_layers();
        acts.layers.resize_with(layers + 1, Vec::new);
        acts.layers[0].clear();
        acts.layers[0].extend_from_slice(input);
        let mut off = 0;
        for l in 0..layers {
            let (fan_in, fan_out) = (self.dims[l], self.dims[l + 1]);
            let w = &self.params[off..off + fan_in * fan_out];
            let b = &self.params[off + fan_in * fan_out..off + fan_in * fan_out + fan_out];
            off += fan_in * fan_out + fan_out;
            let (prev, next) = acts.layers.split_at_mut(l + 1);
            let x = &prev[l];
            let out = &mut next[0];
            out.clear();
            let hidden = l + 1 < layers;
            for o in 0..fan_out {
                let z = b[o] + dot(&w[o * fan_in..(o + 1) * fan_in], x);
                out.push(if hidden { z.max(0.0) } else { z });
            }
        }
    }

    /// Accumulate into `grads` the gradient of `d_out · output` with respect
    /// to the parameters, using activations from [`forward_cached`](Self::forward_cached).
    pub fn backward(&self, acts: &Activations, d_out: &[f64], grads: &mut [f64]) {
        let layers = self.num_layers();
        let mut delta = d_out.to_vec();
        let mut offsets = Vec::with_capacity(layers);
        let mut off = 0;
        for l in 0..layers {
            offsets.push(off);
            off += self.dims[l] * self.dims[l + 1] + self.dims[l + 1];
        }
        for l in (0..layers).rev() {
            let (fan_in, fan_out) = (self.dims[l], self.dims[l + 1]);
            let off = offsets[l];
            let x = &acts.layers[l];
            let w = &self.params[off..off + fan_in * fan_out];
            let (gw, gb) = grads[off..off + fan_in * fan_out + fan_out].split_at_mut(fan_in * fan_out);
            let mut d_in = vec![0.0; if l > 0 { fan_in } else { 0 }];
            for o in 0..fan_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                gb[o] += d;
                axpy(d, x, &mut gw[o * fan_in..(o + 1) * fan_in]);
                if l > 0 {
                    axpy(d, &w[o * fan_in..(o + 1) * fan_in], &mut d_in);
                }
            }
            if l > 0 {
                // rectifier derivative; x holds post-activation values
                for (di, &xi) in d_in.iter_mut().zip(x) {
                    if xi <= 0.0 {
                        *di = 0.0;
                    }
                }
                delta = d_in;
            }
        }
    }

    /// Mean of `½ (r + γ·max Q_target(s') − Q(s, a))²` over the batch, and its
    /// gradient with respect to this network's parameters. The target network
    /// is treated as a constant.
    pub fn td_loss_and_grad(&self, target: &QNet, batch: &[Transition], gamma: f64) -> (f64, Vec<f64>) {
        let mut grads = vec![0.0; self.params.len()];
        let mut acts = Activations::default();
        let mut loss = 0.0;
        let scale = 1.0 / batch.len().max(1) as f64;
        let mut d_out = vec![0.0; self.output_dim()];
        for t in batch {
            let y = td_target(target, t, gamma);
            self.forward_cached(&t.input, &mut acts);
            let q = acts.output()[t.action.index()];
            let err = q - y;
            loss += 0.5 * err * err * scale;
            d_out.iter_mut().for_each(|d| *d = 0.0);
            d_out[t.action.index()] = err * scale;
            self.backward(&acts, &d_out, &mut grads);
        }
        (loss, grads)
    }

    /// One plain gradient step on the squared TD error of a single
    /// transition, with the target computed from the pre-step parameters.
    pub fn q_update(&self, t: &Transition, gamma: f64, lr: f64) -> QNet {
        let frozen = self.clone();
        let (_, grads) = self.td_loss_and_grad(&frozen, std::slice::from_ref(t), gamma);
        let mut next = self.clone();
        for (p, g) in next.params.iter_mut().zip(&grads) {
            *p -= lr * g;
        }
        next
    }
}

/// `r + γ · max_a' Q_target(s', a')`.
pub fn td_target(target: &QNet, t: &Transition, gamma: f64) -> f64 {
    if gamma == 0.0 {
        return t.reward;
    }
    let next = target.forward(&t.next_input);
    t.reward + gamma * next.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Index of the largest value; the first one wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Stochastic gradient descent with heavy-ball momentum.
#[derive(Debug, Clone)]
pub struct SgdMomentum {
    pub lr: f64,
    pub momentum: f64,
    velocity: Vec<f64>,
}

impl SgdMomentum {
    pub fn new(lr: f64, momentum: f64, num_params: usize) -> Self {
        SgdMomentum { lr, momentum, velocity: vec![0.0; num_params] }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        for ((p, v), g) in params.iter_mut().zip(&mut self.velocity).zip(grads) {
            *v = self.momentum * *v + g;
            *p -= self.lr * *v;
        }
    }
}

/// Adam with the usual bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(lr: f64, num_params: usize) -> Self {
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; num_params], v: vec![0.0; num_params], t: 0 }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (((p, m), v), &g) in params.iter_mut().zip(&mut self.m).zip(&mut self.v).zip(grads) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
        }
    }
}

#[derive(Serialize, Deserialize)]
struct QNetRepr {
    dims: Vec<usize>,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

impl Serialize for QNet {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let (mut weights, mut biases) = (Vec::new(), Vec::new());
        for l in 0..self.num_layers() {
            let (w, b) = self.layer(l);
            weights.push(w.to_vec());
            biases.push(b.to_vec());
        }
        QNetRepr { dims: self.dims.clone(), weights, biases }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for QNet {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        let repr = QNetRepr::deserialize(d)?;
        if repr.dims.len() < 2 {
            return Err(D::Error::custom("network needs at least two layer widths"));
        }
        let layers = repr.dims.len() - 1;
        if repr.weights.len() != layers || repr.biases.len() != layers {
            return Err(D::Error::custom("layer count does not match dims"));
        }
        let mut net = QNet::zeros(&repr.dims);
        for l in 0..layers {
            let (fan_in, fan_out) = (repr.dims[l], repr.dims[l + 1]);
            if repr.weights[l].len() != fan_in * fan_out || repr.biases[l].len() != fan_out {
                return Err(D::Error::custom(format!("layer {l} has wrong parameter count")));
            }
            let (w, b) = net.layer_mut(l);
            w.copy_from_slice(&repr.weights[l]);
            b.copy_from_slice(&repr.biases[l]);
        }
        Ok(net)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn transition(input: Vec<f64>, action: Action, reward: f64, next_input: Vec<f64>) -> Transition {
        Transition { input, action, reward, next_input }
    }

    #[test]
    fn zero_net_outputs_zero_and_argmax_prefers_first() {
        let net = QNet::zeros(&[4, 8, 3, 4]);
        assert_eq!(net.forward(&[1.0, -2.0, 3.0, 0.5]), vec![0.0; 4]);
        assert_eq!(argmax(&[0.0; 4]), 0);
        assert_eq!(argmax(&[1.0, 3.0, 3.0, 2.0]), 1);
    }

    #[test]
    fn linear_one_hot_update_is_tabular() {
        // single linear layer with bias: a step of size α moves Q(s,a) by
        // α·(‖x‖² + 1)·(r − Q); with one-hot x that is a tabular step of 2α
        let net = QNet::zeros(&[3, 4]);
        let alpha = 0.1;
        let t = transition(vec![0.0, 1.0, 0.0], Action::Right, 1.0, vec![1.0, 0.0, 0.0]);
        let next = net.q_update(&t, 0.0, alpha);
        let q = next.forward(&t.input);
        assert!((q[1] - 2.0 * alpha * (1.0 - 0.0)).abs() < 1e-12);
        assert_eq!(q[0], 0.0);
        // other one-hot states are untouched apart from the shared bias
        let other = next.forward(&[0.0, 0.0, 1.0]);
        assert!((other[1] - alpha).abs() < 1e-12);
    }

    #[test]
    fn gamma_zero_target_is_reward() {
        let mut r = rng::from_seed(3);
        let net = QNet::new(&[2, 5, 4], &mut r);
        let t = transition(vec![0.3, -0.2], Action::Up, 2.5, vec![1.0, 1.0]);
        assert_eq!(td_target(&net, &t, 0.0), 2.5);
    }

    #[test]
    fn zero_learning_rate_is_identity() {
        let mut r = rng::from_seed(4);
        let net = QNet::new(&[2, 6, 4], &mut r);
        let t = transition(vec![0.3, -0.2], Action::Left, 1.0, vec![0.1, 0.4]);
        assert_eq!(net.q_update(&t, 0.9, 0.0), net);
        let mut opt = SgdMomentum::new(0.0, 0.9, net.params().len());
        let mut p = net.params().to_vec();
        let ones = vec![1.0; p.len()];
        opt.step(&mut p, &ones);
        assert_eq!(p, net.params());
    }

    #[test]
    fn update_reduces_td_error() {
        let mut r = rng::from_seed(5);
        let net = QNet::new(&[2, 16, 4], &mut r);
        let t = transition(vec![0.5, -0.5], Action::Down, 3.0, vec![0.0, 0.0]);
        let frozen = net.clone();
        let (before, _) = net.td_loss_and_grad(&frozen, std::slice::from_ref(&t), 0.5);
        let next = net.q_update(&t, 0.5, 0.01);
        let (after, _) = next.td_loss_and_grad(&frozen, std::slice::from_ref(&t), 0.5);
        assert!(after < before);
    }

    #[test]
    fn json_round_trip() {
        let mut r = rng::from_seed(6);
        let net = QNet::new(&[2, 3, 4], &mut r);
        let j = serde_json::to_string(&net).unwrap();
        let back: QNet = serde_json::from_str(&j).unwrap();
        assert_eq!(back, net);
        assert!(serde_json::from_str::<QNet>(r#"{"dims":[2,4],"weights":[[1.0]],"biases":[[0,0,0,0]]}"#).is_err());
    }
}
