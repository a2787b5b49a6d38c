//! Single-hidden-layer feed-forward network with direct multi-horizon
//! outputs, trained by seeded mini-batch gradient descent.

use crate::error::{invalid, Result};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub hidden: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for MlpParams {
    fn default() -> Self {
        Self {
            hidden: 32,
            learning_rate: 0.01,
            epochs: 200,
            batch_size: 32,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub input: Vec<f64>,
    pub target: Vec<f64>,
}

/// Parameters live in one flat vector: `W1 (hidden x in)`, `b1`,
/// `W2 (out x hidden)`, `b2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub n_in: usize,
    pub n_hidden: usize,
    pub n_out: usize,
    pub params: Vec<f64>,
}

impl Mlp {
    /// Xavier-uniform weights, zero biases.
    pub fn new(n_in: usize, n_hidden: usize, n_out: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(n_hidden * n_in + n_hidden + n_out * n_hidden + n_out);
        let a1 = (6.0 / (n_in + n_hidden) as f64).sqrt();
        params.extend((0..n_hidden * n_in).map(|_| rng.random_range(-a1..a1)));
        params.extend(std::iter::repeat_n(0.0, n_hidden));
        let a2 = (6.0 / (n_hidden + n_out) as f64).sqrt();
        params.extend((0..n_out * n_hidden).map(|_| rng.random_range(-a2..a2)));
        params.extend(std::iter::repeat_n(0.0, n_out));
        Self {
            n_in,
            n_hidden,
            n_out,
            params,
        }
    }

    fn offsets(&self) -> (usize, usize, usize) {
        let b1 = self.n_hidden * self.n_in;
        let w2 = b1 + self.n_hidden;
        let b2 = w2 + self.n_out * self.n_hidden;
        (b1, w2, b2)
    }

    fn hidden(&self, x: &[f64]) -> Vec<f64> {
        let (b1, _, _) = self.offsets();
        (0..self.n_hidden)
            .map(|j| {
                let w = &self.params[j * self.n_in..(j + 1) * self.n_in];
                let z: f64 = w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + self.params[b1 + j];
                z.tanh()
            })
            .collect()
    }

    fn output(&self, h: &[f64]) -> Vec<f64> {
        let (_, w2, b2) = self.offsets();
        (0..self.n_out)
            .map(|k| {
                let w = &self.params[w2 + k * self.n_hidden..w2 + (k + 1) * self.n_hidden];
                w.iter().zip(h).map(|(a, b)| a * b).sum::<f64>() + self.params[b2 + k]
            })
            .collect()
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.output(&self.hidden(x))
    }

    /// Mean over samples of `0.5 * sum_k (out_k - target_k)^2`.
    pub fn loss(&self, batch: &[Sample]) -> f64 {
        let total: f64 = batch
            .iter()
            .map(|s| {
                let o = self.forward(&s.input);
                0.5 * o.iter().zip(&s.target).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
            })
            .sum();
        total / batch.len() as f64
    }

    /// Loss and its analytic gradient by backpropagation.
    pub fn loss_and_grad(&self, batch: &[Sample]) -> (f64, Vec<f64>) {
        let (b1, w2, b2) = self.offsets();
        let mut grad = vec![0.0; self.params.len()];
        let mut loss = 0.0;
        let scale = 1.0 / batch.len() as f64;
        for s in batch {
            let h = self.hidden(&s.input);
            let o = self.output(&h);
            let delta_out: Vec<f64> = o.iter().zip(&s.target).map(|(a, b)| a - b).collect();
            loss += 0.5 * delta_out.iter().map(|d| d * d).sum::<f64>();
            let mut delta_hidden = vec![0.0; self.n_hidden];
            for (k, &d) in delta_out.iter().enumerate() {
                grad[b2 + k] += d * scale;
                for j in 0..self.n_hidden {
                    grad[w2 + k * self.n_hidden + j] += d * h[j] * scale;
                    delta_hidden[j] += d * self.params[w2 + k * self.n_hidden + j];
                }
            }
            for j in 0..self.n_hidden {
                let dz = delta_hidden[j] * (1.0 - h[j] * h[j]);
                if dz == 0.0 {
                    continue;
                }
                grad[b1 + j] += dz * scale;
                let row = &mut grad[j * self.n_in..(j + 1) * self.n_in];
                for (g, &xi) in row.iter_mut().zip(&s.input) {
                    *g += dz * xi * scale;
                }
            }
        }
        (loss * scale, grad)
    }

    /// Plain mini-batch gradient descent; sample order is reshuffled each
    /// epoch from a seeded generator.
    pub fn train(&mut self, samples: &[Sample], params: &MlpParams) -> Result<()> {
        if params.batch_size == 0 {
            return Err(invalid("batch_size", "must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed.wrapping_add(1));
        let mut order: Vec<usize> = (0..samples.len()).collect();
        let mut batch = Vec::with_capacity(params.batch_size);
        for _ in 0..params.epochs {
            order.shuffle(&mut rng);
            for chunk in order.chunks(params.batch_size) {
                batch.clear();
                batch.extend(chunk.iter().map(|&i| samples[i].clone()));
                let (_, grad) = self.loss_and_grad(&batch);
                for (p, g) in self.params.iter_mut().zip(&grad) {
                    *p -= params.learning_rate * g;
                }
            }
        }
        Ok(())
    }
}
