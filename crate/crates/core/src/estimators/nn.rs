//! Fully connected networks with one scalar output, trained with Adam.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => tanh(z),
            Activation::Relu => z.max(0.0),
        }
    }

    /// Derivative expressed through the activation value.
    #[inline]
    fn grad_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Output unit and matching loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Output {
    /// Identity output, half squared error.
    Linear,
    /// Logistic output, binary cross-entropy.
    Sigmoid,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EarlyStopping {
    pub validation_fraction: f64,
    pub patience: usize,
    pub tol: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub epochs: usize,
    pub learning_rate: f64,
    /// `None` trains full-batch.
    pub batch_size: Option<usize>,
    pub l2: f64,
    pub early_stopping: Option<EarlyStopping>,
}

#[derive(Debug, Clone, PartialEq)]
struct Dense {
    n_in: usize,
    n_out: usize,
    /// `n_out x n_in`, row-major.
    w: Vec<f64>,
    b: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<Dense>,
    activation: Activation,
    output: Output,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

impl Adam {
    fn new(n: usize) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }
}

/// `1 − 2 / (e^{2z} + 1)`: absolute error near 1e-16, cheaper than `libm::tanh`.
#[inline]
fn tanh(z: f64) -> f64 {
    if z.abs() > 20.0 {
        return z.signum();
    }
    1.0 - 2.0 / (libm::exp(2.0 * z) + 1.0)
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + libm::exp(-z))
    } else {
        let e = libm::exp(z);
        e / (1.0 + e)
    }
}

impl Network {
    fn init<R: Rng>(n_in: usize, cfg: &TrainConfig, output: Output, rng: &mut R) -> Self {
        let mut sizes = vec![n_in];
        sizes.extend_from_slice(&cfg.hidden);
        sizes.push(1);
        let layers = sizes
            .windows(2)
            .map(|w| {
                let (i, o) = (w[0], w[1]);
                let bound = libm::sqrt(6.0 / (i + o) as f64);
                Dense {
                    n_in: i,
                    n_out: o,
                    w: (0..i * o).map(|_| rng.random_range(-bound..bound)).collect(),
                    b: (0..o).map(|_| rng.random_range(-bound..bound)).collect(),
                }
            })
            .collect();
        Network {
            layers,
            activation: cfg.activation,
            output,
        }
    }

    pub fn n_inputs(&self) -> usize {
        self.layers[0].n_in
    }

    fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// Network output (a probability for sigmoid networks).
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut cur: Vec<f64> = x.to_vec();
        let last = self.layers.len() - 1;
        for (li, layer) in self.layers.iter().enumerate() {
            let mut next = layer.b.clone();
            for (o, out) in next.iter_mut().enumerate() {
                let row = &layer.w[o * layer.n_in..(o + 1) * layer.n_in];
                *out += dot(row, &cur);
                if li < last {
                    *out = self.activation.apply(*out);
                }
            }
            cur = next;
        }
        match self.output {
            Output::Linear => cur[0],
            Output::Sigmoid => sigmoid(cur[0]),
        }
    }

    /// Mean loss over rows of `x` (row-major, `n_inputs` wide).
    pub fn loss(&self, x: &[f64], y: &[f64]) -> f64 {
        let d = self.n_inputs();
        let n = y.len();
        let mut total = 0.0;
        for i in 0..n {
            let p = self.predict(&x[i * d..(i + 1) * d]);
            total += pointwise_loss(self.output, p, y[i]);
        }
        total / n as f64
    }

    /// Forward and backward pass over `rows`, accumulating gradients into
    /// `grad` (layout matches the parameter order). Returns the mean loss.
    fn accumulate_gradient(
        &self,
        x: &[f64],
        y: &[f64],
        rows: &[usize],
        grad: &mut [f64],
        scratch: &mut Scratch,
    ) -> f64 {
        let d = self.n_inputs();
        let bs = rows.len();
        let last = self.layers.len() - 1;
        let inv = 1.0 / bs as f64;

        // acts[0] is the input batch; acts[l + 1] the output of layer l.
        scratch.acts[0].clear();
        for &r in rows {
            scratch.acts[0].extend_from_slice(&x[r * d..(r + 1) * d]);
        }
        for (li, layer) in self.layers.iter().enumerate() {
            let (before, after) = scratch.acts.split_at_mut(li + 1);
            let input = &before[li];
            let out = &mut after[0];
            out.clear();
            out.resize(bs * layer.n_out, 0.0);
            for s in 0..bs {
                let xin = &input[s * layer.n_in..(s + 1) * layer.n_in];
                for o in 0..layer.n_out {
                    let row = &layer.w[o * layer.n_in..(o + 1) * layer.n_in];
                    let z = layer.b[o] + dot(row, xin);
                    out[s * layer.n_out + o] = if li < last {
                        self.activation.apply(z)
                    } else {
                        z
                    };
                }
            }
        }

        let mut loss = 0.0;
        let delta = &mut scratch.delta;
        delta.clear();
        for (s, &r) in rows.iter().enumerate() {
            let z = scratch.acts[last + 1][s];
            let (p, g) = match self.output {
                Output::Linear => (z, z - y[r]),
                Output::Sigmoid => {
                    let p = sigmoid(z);
                    (p, p - y[r])
                }
            };
            loss += pointwise_loss(self.output, p, y[r]);
            delta.push(g * inv);
        }

        let mut offset_end = grad.len();
        for li in (0..self.layers.len()).rev() {
            let layer = &self.layers[li];
            let offset = offset_end - layer.w.len() - layer.b.len();
            let (gw, gb) = grad[offset..offset_end].split_at_mut(layer.w.len());
            let input = &scratch.acts[li];
            for s in 0..bs {
                let xin = &input[s * layer.n_in..(s + 1) * layer.n_in];
                for o in 0..layer.n_out {
                    let dlt = delta[s * layer.n_out + o];
                    if dlt == 0.0 {
                        continue;
                    }
                    gb[o] += dlt;
                    axpy(dlt, xin, &mut gw[o * layer.n_in..(o + 1) * layer.n_in]);
                }
            }
            if li > 0 {
                let prev = &mut scratch.prev_delta;
                prev.clear();
                prev.resize(bs * layer.n_in, 0.0);
                for s in 0..bs {
                    let pd = &mut prev[s * layer.n_in..(s + 1) * layer.n_in];
                    for o in 0..layer.n_out {
                        let dlt = delta[s * layer.n_out + o];
                        if dlt != 0.0 {
                            axpy(dlt, &layer.w[o * layer.n_in..(o + 1) * layer.n_in], pd);
                        }
                    }
                    let a = &input[s * layer.n_in..(s + 1) * layer.n_in];
                    for (g, av) in pd.iter_mut().zip(a) {
                        *g *= self.activation.grad_from_output(*av);
                    }
                }
                core::mem::swap(delta, prev);
            }
            offset_end = offset;
        }
        loss * inv
    }

    fn adam_step(&mut self, grad: &[f64], l2: f64, lr: f64, opt: &mut Adam) {
        opt.step += 1;
        let c1 = 1.0 - libm::pow(BETA1, opt.step as f64);
        let c2 = 1.0 - libm::pow(BETA2, opt.step as f64);
        let mut k = 0;
        for layer in &mut self.layers {
            for (is_weight, params) in [(true, &mut layer.w), (false, &mut layer.b)] {
                for p in params.iter_mut() {
                    let g = grad[k] + if is_weight { l2 * *p } else { 0.0 };
                    opt.m[k] = BETA1 * opt.m[k] + (1.0 - BETA1) * g;
                    opt.v[k] = BETA2 * opt.v[k] + (1.0 - BETA2) * g * g;
                    let mh = opt.m[k] / c1;
                    let vh = opt.v[k] / c2;
                    *p -= lr * mh / (libm::sqrt(vh) + EPS);
                    k += 1;
                }
            }
        }
    }
}

struct Scratch {
    acts: Vec<Vec<f64>>,
    delta: Vec<f64>,
    prev_delta: Vec<f64>,
}

#[inline]
fn pointwise_loss(output: Output, p: f64, y: f64) -> f64 {
    match output {
        Output::Linear => 0.5 * (p - y) * (p - y),
        Output::Sigmoid => {
            let p = p.clamp(1e-12, 1.0 - 1e-12);
            -(y * libm::log(p) + (1.0 - y) * libm::log(1.0 - p))
        }
    }
}

/// Four partial sums so the loop can vectorize.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Trains a network on row-major `x` (`dim` columns) and targets `y`.
pub fn train<R: Rng>(
    x: &[f64],
    dim: usize,
    y: &[f64],
    output: Output,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<Network> {
    let n = y.len();
    if n == 0 {
        return Err(Error::TooFewValues { needed: 1, found: 0 });
    }
    if x.len() != n * dim {
        return Err(Error::DimensionMismatch {
            expected: n * dim,
            found: x.len(),
        });
    }
    let mut net = Network::init(dim, cfg, output, rng);
    let mut opt = Adam::new(net.n_params());
    let mut grad = vec![0.0; net.n_params()];
    let mut scratch = Scratch {
        acts: vec![Vec::new(); net.layers.len() + 1],
        delta: Vec::new(),
        prev_delta: Vec::new(),
    };

    let mut order: Vec<usize> = (0..n).collect();
    let (train_rows, val_rows) = match cfg.early_stopping {
        Some(es) if n >= 10 => {
            order.shuffle(rng);
            let n_val = ((es.validation_fraction * n as f64) as usize).max(1);
            let val = order[..n_val].to_vec();
            (order[n_val..].to_vec(), val)
        }
        _ => (order, Vec::new()),
    };
    let mut train_rows = train_rows;
    let batch = cfg.batch_size.unwrap_or(train_rows.len()).clamp(1, train_rows.len());

    let mut best: Option<(f64, Network)> = None;
    let mut stale = 0;
    for _ in 0..cfg.epochs {
        if batch < train_rows.len() {
            train_rows.shuffle(rng);
        }
        for chunk in train_rows.chunks(batch) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let loss = net.accumulate_gradient(x, y, chunk, &mut grad, &mut scratch);
            if !loss.is_finite() {
                return Err(Error::Diverged);
            }
            net.adam_step(&grad, cfg.l2, cfg.learning_rate, &mut opt);
        }
        if let (Some(es), false) = (cfg.early_stopping, val_rows.is_empty()) {
            let val_loss = val_rows
                .iter()
                .map(|&r| pointwise_loss(output, net.predict(&x[r * dim..(r + 1) * dim]), y[r]))
                .sum::<f64>()
                / val_rows.len() as f64;
            if !val_loss.is_finite() {
                return Err(Error::Diverged);
            }
            match &best {
                Some((b, _)) if val_loss > b - es.tol => {
                    stale += 1;
                    if stale >= es.patience {
                        break;
                    }
                }
                _ => {
                    best = Some((val_loss, net.clone()));
                    stale = 0;
                }
            }
        }
    }
    Ok(match best {
        Some((_, b)) => b,
        None => net,
    })
}
