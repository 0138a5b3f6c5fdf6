//! Dense autoencoder with a two-unit linear bottleneck, trained with Adam
//! on mean squared reconstruction error.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const HIDDEN: [usize; 2] = [64, 32];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    /// Row-major `outputs × inputs`.
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    pub tanh: bool,
}

impl Dense {
    fn new(inputs: usize, outputs: usize, tanh: bool, rng: &mut ChaCha8Rng) -> Dense {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        Dense {
            inputs,
            outputs,
            w: (0..inputs * outputs)
                .map(|_| rng.random_range(-limit..limit))
                .collect(),
            b: vec![0.0; outputs],
            tanh,
        }
    }

    fn forward(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for o in 0..self.outputs {
            let row = &self.w[o * self.inputs..(o + 1) * self.inputs];
            let z = self.b[o] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
            out.push(if self.tanh { z.tanh() } else { z });
        }
    }

    fn param_count(&self) -> usize {
        self.w.len() + self.b.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub fine_tune_epochs: usize,
    pub lr: f64,
    pub batch: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            fine_tune_epochs: 50,
            lr: 1e-3,
            batch: 32,
            seed: 0xae,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Autoencoder {
    pub layers: Vec<Dense>,
    /// Index of the bottleneck layer (encoder output).
    pub bottleneck: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainReport {
    pub initial_loss: f64,
    pub final_loss: f64,
    pub epochs: usize,
}

impl Autoencoder {
    /// `dim → 64 → 32 → 2 → 32 → 64 → dim`, tanh on hidden layers.
    pub fn new(dim: usize, seed: u64) -> Autoencoder {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sizes = [dim, HIDDEN[0], HIDDEN[1], 2, HIDDEN[1], HIDDEN[0], dim];
        let last = sizes.len() - 2;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| Dense::new(w[0], w[1], i != 2 && i != last, &mut rng))
            .collect();
        Autoencoder {
            layers,
            bottleneck: 2,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Dense::param_count).sum()
    }

    pub fn encode(&self, x: &[f64]) -> [f64; 2] {
        let mut a = x.to_vec();
        let mut next = Vec::new();
        for l in &self.layers[..=self.bottleneck] {
            l.forward(&a, &mut next);
            std::mem::swap(&mut a, &mut next);
        }
        [a[0], a[1]]
    }

    fn activations(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = vec![x.to_vec()];
        for l in &self.layers {
            let mut out = Vec::with_capacity(l.outputs);
            l.forward(acts.last().unwrap(), &mut out);
            acts.push(out);
        }
        acts
    }

    /// Mean over samples and dimensions of the squared reconstruction error.
    pub fn loss(&self, data: &[&[f64]]) -> f64 {
        let d = self.input_dim() as f64;
        data.iter()
            .map(|x| {
                let acts = self.activations(x);
                acts.last()
                    .unwrap()
                    .iter()
                    .zip(x.iter())
                    .map(|(y, t)| (y - t).powi(2))
                    .sum::<f64>()
                    / d
            })
            .sum::<f64>()
            / data.len() as f64
    }

    /// Loss and its gradient with respect to the flattened parameters
    /// (layer by layer, weights then biases).
    pub fn loss_and_grad(&self, batch: &[&[f64]]) -> (f64, Vec<f64>) {
        let scale = 1.0 / (batch.len() as f64 * self.input_dim() as f64);
        let mut grads: Vec<(Vec<f64>, Vec<f64>)> = self
            .layers
            .iter()
            .map(|l| (vec![0.0; l.w.len()], vec![0.0; l.b.len()]))
            .collect();
        let mut loss = 0.0;
        for x in batch {
            let acts = self.activations(x);
            let y = acts.last().unwrap();
            let mut delta: Vec<f64> = y
                .iter()
                .zip(x.iter())
                .map(|(y, t)| {
                    loss += (y - t).powi(2) * scale;
                    2.0 * (y - t) * scale
                })
                .collect();
            for (li, l) in self.layers.iter().enumerate().rev() {
                let out = &acts[li + 1];
                if l.tanh {
                    for (d, a) in delta.iter_mut().zip(out) {
                        *d *= 1.0 - a * a;
                    }
                }
                let input = &acts[li];
                let (gw, gb) = &mut grads[li];
                for o in 0..l.outputs {
                    gb[o] += delta[o];
                    let row = &mut gw[o * l.inputs..(o + 1) * l.inputs];
                    for (g, a) in row.iter_mut().zip(input) {
                        *g += delta[o] * a;
                    }
                }
                if li > 0 {
                    let mut prev = vec![0.0; l.inputs];
                    for o in 0..l.outputs {
                        let row = &l.w[o * l.inputs..(o + 1) * l.inputs];
                        for (p, w) in prev.iter_mut().zip(row) {
                            *p += delta[o] * w;
                        }
                    }
                    delta = prev;
                }
            }
        }
        let flat = grads.into_iter().flat_map(|(w, b)| w.into_iter().chain(b)).collect();
        (loss, flat)
    }

    pub fn params(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.w.iter().chain(&l.b).copied())
            .collect()
    }

    pub fn set_params(&mut self, p: &[f64]) {
        let mut it = p.iter().copied();
        for l in &mut self.layers {
            l.w.iter_mut().chain(l.b.iter_mut()).for_each(|v| *v = it.next().unwrap());
        }
    }

    /// Adam on shuffled minibatches. Keeps the parameters with the lowest
    /// full-data loss seen, so the result never scores worse than the start.
    pub fn train(&mut self, data: &[&[f64]], epochs: usize, cfg: &TrainConfig) -> Result<TrainReport> {
        let initial = self.loss(data);
        if !initial.is_finite() {
            return Err(Error::NonFiniteLoss { epoch: 0, lr: cfg.lr });
        }
        let (b1, b2, eps) = (0.9, 0.999, 1e-8);
        let mut params = self.params();
        let mut m = vec![0.0; params.len()];
        let mut v = vec![0.0; params.len()];
        let mut best = (initial, params.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut step = 0i32;
        for epoch in 1..=epochs {
            order.shuffle(&mut rng);
            for chunk in order.chunks(cfg.batch.max(1)) {
                let batch: Vec<&[f64]> = chunk.iter().map(|&i| data[i]).collect();
                let (loss, g) = self.loss_and_grad(&batch);
                if !loss.is_finite() {
                    return Err(Error::NonFiniteLoss { epoch, lr: cfg.lr });
                }
                step += 1;
                let c1 = 1.0 - f64::powi(b1, step);
                let c2 = 1.0 - f64::powi(b2, step);
                for i in 0..params.len() {
                    m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                    v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                    params[i] -= cfg.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
                }
                self.set_params(&params);
            }
            let full = self.loss(data);
            if !full.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, lr: cfg.lr });
            }
            if full < best.0 {
                best = (full, params.clone());
            }
        }
        self.set_params(&best.1);
        Ok(TrainReport {
            initial_loss: initial,
            final_loss: best.0,
            epochs,
        })
    }
}
