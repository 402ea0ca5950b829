//! One-hidden-layer perceptron with a sigmoid output, binary cross-entropy
//! and Adam.

use rand::Rng;
use serde::{Deserialize, Serialize};

/// Numerically stable sigmoid.
#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy of `sigmoid(logit)` against `target`, computed from
/// the logit to avoid `ln(0)`.
#[inline]
pub fn bce_with_logit(logit: f64, target: f64) -> f64 {
    logit.max(0.0) - logit * target + (-logit.abs()).exp().ln_1p()
}

/// `inputs → hidden (ReLU) → 1 (sigmoid)`.
///
/// Parameters live in one flat vector laid out as
/// `[w1 (hidden × inputs, row-major) | b1 | w2 | b2]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub inputs: usize,
    pub hidden: usize,
    pub params: Vec<f64>,
}

impl Mlp {
    pub fn param_count(inputs: usize, hidden: usize) -> usize {
        hidden * inputs + hidden + hidden + 1
    }

    pub fn zeros(inputs: usize, hidden: usize) -> Self {
        Self {
            inputs,
            hidden,
            params: vec![0.0; Self::param_count(inputs, hidden)],
        }
    }

    /// He-uniform first layer, Glorot-uniform output layer, zero biases.
    pub fn init<R: Rng + ?Sized>(inputs: usize, hidden: usize, rng: &mut R) -> Self {
        let mut net = Self::zeros(inputs, hidden);
        let a1 = (6.0 / inputs as f64).sqrt();
        let a2 = (6.0 / (hidden + 1) as f64).sqrt();
        let (w1, rest) = net.params.split_at_mut(hidden * inputs);
        w1.iter_mut().for_each(|w| *w = rng.random_range(-a1..a1));
        rest[hidden..2 * hidden]
            .iter_mut()
            .for_each(|w| *w = rng.random_range(-a2..a2));
        net
    }

    fn offsets(&self) -> (usize, usize, usize) {
        let b1 = self.hidden * self.inputs;
        let w2 = b1 + self.hidden;
        let b2 = w2 + self.hidden;
        (b1, w2, b2)
    }

    /// Output logit and the hidden activations.
    pub fn forward(&self, x: &[f64], hidden_out: &mut [f64]) -> f64 {
        debug_assert_eq!(x.len(), self.inputs);
        let (b1, w2, b2) = self.offsets();
        let p = &self.params;
        let mut z = p[b2];
        for j in 0..self.hidden {
            let row = &p[j * self.inputs..(j + 1) * self.inputs];
            let pre: f64 = p[b1 + j] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
            let a = pre.max(0.0);
            hidden_out[j] = a;
            z += p[w2 + j] * a;
        }
        z
    }

    pub fn logit(&self, x: &[f64]) -> f64 {
        let mut h = vec![0.0; self.hidden];
        self.forward(x, &mut h)
    }

    pub fn probability(&self, x: &[f64]) -> f64 {
        sigmoid(self.logit(x))
    }

    /// BCE loss on one sample; accumulates its gradient into `grad`.
    pub fn loss_and_grad(&self, x: &[f64], target: f64, grad: &mut [f64]) -> f64 {
        let mut h = vec![0.0; self.hidden];
        let z = self.forward(x, &mut h);
        let dz = sigmoid(z) - target;
        let (b1, w2, b2) = self.offsets();
        grad[b2] += dz;
        for j in 0..self.hidden {
            grad[w2 + j] += dz * h[j];
            if h[j] > 0.0 {
                let dpre = dz * self.params[w2 + j];
                grad[b1 + j] += dpre;
                let row = &mut grad[j * self.inputs..(j + 1) * self.inputs];
                for (g, v) in row.iter_mut().zip(x) {
                    *g += dpre * v;
                }
            }
        }
        bce_with_logit(z, target)
    }

    /// Mean BCE over a batch and its gradient.
    pub fn batch_loss_and_grad(&self, xs: &[Vec<f64>], targets: &[f64]) -> (f64, Vec<f64>) {
        let mut grad = vec![0.0; self.params.len()];
        let mut loss = 0.0;
        for (x, &t) in xs.iter().zip(targets) {
            loss += self.loss_and_grad(x, t, &mut grad);
        }
        let n = xs.len() as f64;
        grad.iter_mut().for_each(|g| *g /= n);
        (loss / n, grad)
    }

    pub fn batch_loss(&self, xs: &[Vec<f64>], targets: &[f64]) -> f64 {
        xs.iter()
            .zip(targets)
            .map(|(x, &t)| bce_with_logit(self.logit(x), t))
            .sum::<f64>()
            / xs.len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam with bias-corrected first and second moments.
#[derive(Debug, Clone)]
pub struct Adam {
    config: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl Adam {
    pub fn new(config: AdamConfig, n_params: usize) -> Self {
        Self {
            config,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn update(&mut self, params: &mut [f64], grad: &[f64]) {
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        self.step += 1;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for i in 0..params.len() {
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * grad[i];
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
        }
    }
}
