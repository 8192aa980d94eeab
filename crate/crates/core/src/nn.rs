//! Minimal dense networks with exact reverse-mode gradients.
//!
//! Parameters live in one flat `Vec<f64>`: for every layer the weight matrix
//! (row-major, `out × in`) followed by the bias vector. Gradients use the
//! same layout so an optimizer can treat a network as a plain slice.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activation output `y`.
    fn deriv_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    sizes: Vec<usize>,
    hidden: Activation,
    params: Vec<f64>,
}

/// Layer outputs recorded during a forward pass.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    acts: Vec<Vec<f64>>,
}

impl Mlp {
    /// Glorot-style normal initialisation, zero biases.
    pub fn new(sizes: &[usize], hidden: Activation, rng: &mut impl Rng) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs input and output sizes");
        let mut params = Vec::with_capacity(Self::count(sizes));
        for w in sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let sd = (2.0 / (fan_in + fan_out) as f64).sqrt();
            for _ in 0..fan_in * fan_out {
                let z: f64 = StandardNormal.sample(rng);
                params.push(sd * z);
            }
            params.extend(std::iter::repeat_n(0.0, fan_out));
        }
        Self {
            sizes: sizes.to_vec(),
            hidden,
            params,
        }
    }

    pub fn from_params(sizes: &[usize], hidden: Activation, params: Vec<f64>) -> Option<Self> {
        (params.len() == Self::count(sizes)).then(|| Self {
            sizes: sizes.to_vec(),
            hidden,
            params,
        })
    }

    fn count(sizes: &[usize]) -> usize {
        sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn hidden_activation(&self) -> Activation {
        self.hidden
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// Offsets of (weights, biases) of layer `l` in the parameter vector.
    fn layer_offsets(&self, l: usize) -> (usize, usize) {
        let mut off = 0;
        for w in self.sizes.windows(2).take(l) {
            off += w[0] * w[1] + w[1];
        }
        (off, off + self.sizes[l] * self.sizes[l + 1])
    }

    /// Sets the last layer's weights and biases to zero.
    pub fn zero_output_layer(&mut self) {
        let l = self.sizes.len() - 2;
        let (w, _) = self.layer_offsets(l);
        for p in &mut self.params[w..] {
            *p = 0.0;
        }
    }

    /// Sets the bias of output unit `k`.
    pub fn set_output_bias(&mut self, k: usize, value: f64) {
        let l = self.sizes.len() - 2;
        let (_, b) = self.layer_offsets(l);
        self.params[b + k] = value;
    }

    /// Zeros the weights feeding output unit `k`.
    pub fn zero_output_row(&mut self, k: usize) {
        let l = self.sizes.len() - 2;
        let (w, _) = self.layer_offsets(l);
        let n_in = self.sizes[l];
        for p in &mut self.params[w + k * n_in..w + (k + 1) * n_in] {
            *p = 0.0;
        }
    }

    fn layer(&self, l: usize, x: &[f64], last: bool) -> Vec<f64> {
        let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
        let (w, b) = self.layer_offsets(l);
        let weights = &self.params[w..w + n_in * n_out];
        let bias = &self.params[b..b + n_out];
        let act = if last { Activation::Identity } else { self.hidden };
        (0..n_out)
            .map(|o| {
                let row = &weights[o * n_in..(o + 1) * n_in];
                let s: f64 = row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + bias[o];
                act.apply(s)
            })
            .collect()
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.input_dim());
        let n = self.sizes.len() - 1;
        let mut h = x.to_vec();
        for l in 0..n {
            h = self.layer(l, &h, l + 1 == n);
        }
        h
    }

    pub fn forward_tape(&self, x: &[f64]) -> (Vec<f64>, Tape) {
        debug_assert_eq!(x.len(), self.input_dim());
        let n = self.sizes.len() - 1;
        let mut acts = Vec::with_capacity(n + 1);
        acts.push(x.to_vec());
        for l in 0..n {
            let next = self.layer(l, &acts[l], l + 1 == n);
            acts.push(next);
        }
        let out = acts[n].clone();
        (out, Tape { acts })
    }

    /// Back-propagates `d_out` through the recorded pass, accumulating
    /// parameter gradients into `grad` and returning the input gradient.
    pub fn backward(&self, tape: &Tape, d_out: &[f64], grad: &mut [f64]) -> Vec<f64> {
        debug_assert_eq!(grad.len(), self.params.len());
        let n = self.sizes.len() - 1;
        let mut delta = d_out.to_vec();
        for l in (0..n).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            if l + 1 != n {
                // delta currently holds dL/d(output of layer l); fold in the
                // activation derivative.
                for (d, y) in delta.iter_mut().zip(&tape.acts[l + 1]) {
                    *d *= self.hidden.deriv_from_output(*y);
                }
            }
            let (w, b) = self.layer_offsets(l);
            let x = &tape.acts[l];
            let mut d_in = vec![0.0; n_in];
            for o in 0..n_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                grad[b + o] += d;
                let row = w + o * n_in;
                for i in 0..n_in {
                    grad[row + i] += d * x[i];
                    d_in[i] += d * self.params[row + i];
                }
            }
            delta = d_in;
        }
        delta
    }
}

/// Adaptive-moment optimizer state for one flat parameter slice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl Adam {
    pub fn new(n: usize) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub(crate) fn moments(&self) -> (&[f64], &[f64]) {
        (&self.m, &self.v)
    }

    pub(crate) fn from_moments(m: Vec<f64>, v: Vec<f64>, step: u64) -> Self {
        Self {
            m,
            v,
            step,
            ..Self::new(0)
        }
    }

    pub fn update(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        debug_assert_eq!(params.len(), grad.len());
        debug_assert_eq!(params.len(), self.m.len());
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

pub fn softplus_inv(y: f64) -> f64 {
    (y.exp() - 1.0).ln()
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}
