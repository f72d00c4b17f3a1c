//! Fully connected forecaster `ŷ = C·σ(MLP(s))`.

use std::path::Path;

use nalgebra::{DMatrix, DMatrixView, DMatrixViewMut};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Sample;
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "mploss-mlp-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub n_in: usize,
    pub n_out: usize,
    /// Row-major `n_out × n_in`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    fn glorot<R: Rng>(n_in: usize, n_out: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (n_in + n_out) as f64).sqrt();
        Dense {
            n_in,
            n_out,
            weights: (0..n_in * n_out).map(|_| rng.random_range(-limit..=limit)).collect(),
            bias: vec![0.0; n_out],
        }
    }

    fn n_params(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.weights.chunks_exact(self.n_in).zip(&self.bias).map(|(row, b)| {
            row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b
        }));
    }
}

/// Per-feature z-score constants fitted on the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalization {
    pub fn identity(dim: usize) -> Self {
        Normalization {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    pub fn fit(samples: &[Sample]) -> Self {
        let dim = crate::data::N_FEATURES;
        if samples.is_empty() {
            return Self::identity(dim);
        }
        let n = samples.len() as f64;
        let mut mean = vec![0.0; dim];
        for s in samples {
            for (m, v) in mean.iter_mut().zip(s.features) {
                *m += v / n;
            }
        }
        let mut std = vec![0.0; dim];
        for s in samples {
            for ((sd, v), m) in std.iter_mut().zip(s.features).zip(&mean) {
                *sd += (v - m).powi(2) / n;
            }
        }
        for sd in std.iter_mut() {
            *sd = if *sd > 1e-24 { sd.sqrt() } else { 1.0 };
        }
        Normalization { mean, std }
    }
}

/// Activations kept from a forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input followed by every hidden activation.
    acts: Vec<Vec<f64>>,
    sigma: f64,
    pub yhat: f64,
}

/// Forward pass over a batch; row `r` of every matrix belongs to sample `r`.
#[derive(Debug, Clone)]
pub struct BatchCache {
    acts: Vec<DMatrix<f64>>,
    sigma: Vec<f64>,
    pub yhat: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub format: String,
    /// Output scale C (kW).
    pub capacity: f64,
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub layers: Vec<Dense>,
    pub normalization: Normalization,
    pub seed: u64,
}

impl MlpModel {
    /// ReLU hidden layers of the given widths, Glorot-uniform weights, zero biases.
    pub fn new(input_dim: usize, hidden: &[usize], capacity: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut n_in = input_dim;
        for &w in hidden {
            layers.push(Dense::glorot(n_in, w, &mut rng));
            n_in = w;
        }
        layers.push(Dense::glorot(n_in, 1, &mut rng));
        MlpModel {
            format: CHECKPOINT_FORMAT.into(),
            capacity,
            input_dim,
            hidden: hidden.to_vec(),
            layers,
            normalization: Normalization::identity(input_dim),
            seed,
        }
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(Dense::n_params).sum()
    }

    /// Flat parameters: per layer, weights then bias.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != self.n_params() {
            return Err(Error::DimensionMismatch {
                expected: self.n_params(),
                got: p.len(),
            });
        }
        let mut off = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&p[off..off + nw]);
            off += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&p[off..off + nb]);
            off += nb;
        }
        Ok(())
    }

    pub fn forward_cached(&self, features: &[f64]) -> Result<ForwardCache> {
        if features.len() != self.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim,
                got: features.len(),
            });
        }
        let norm = &self.normalization;
        let x: Vec<f64> = features
            .iter()
            .zip(norm.mean.iter().zip(&norm.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect();
        let mut acts = Vec::with_capacity(self.layers.len());
        acts.push(x);
        let (out_layer, hidden) = self.layers.split_last().expect("at least one layer");
        for layer in hidden {
            let mut z = Vec::new();
            layer.apply(acts.last().unwrap(), &mut z);
            z.iter_mut().for_each(|v| *v = v.max(0.0));
            acts.push(z);
        }
        let mut z = Vec::new();
        out_layer.apply(acts.last().unwrap(), &mut z);
        let sigma = logistic(z[0]);
        Ok(ForwardCache {
            acts,
            sigma,
            yhat: self.capacity * sigma,
        })
    }

    pub fn forward(&self, features: &[f64]) -> Result<f64> {
        Ok(self.forward_cached(features)?.yhat)
    }

    /// Adds `scale · ∂ŷ/∂Θ` into `grad` (flat layout of [`MlpModel::params`]).
    pub fn backward_into(&self, cache: &ForwardCache, scale: f64, grad: &mut [f64]) {
        debug_assert_eq!(grad.len(), self.n_params());
        let offsets: Vec<usize> = self
            .layers
            .iter()
            .scan(0, |acc, l| {
                let o = *acc;
                *acc += l.n_params();
                Some(o)
            })
            .collect();
        let mut delta = vec![scale * self.capacity * cache.sigma * (1.0 - cache.sigma)];
        for (k, layer) in self.layers.iter().enumerate().rev() {
            let input = &cache.acts[k];
            let off = offsets[k];
            let (gw, gb) = grad[off..off + layer.n_params()].split_at_mut(layer.weights.len());
            for (o, d) in delta.iter().enumerate() {
                if *d == 0.0 {
                    continue;
                }
                for (g, a) in gw[o * layer.n_in..(o + 1) * layer.n_in].iter_mut().zip(input) {
                    *g += d * a;
                }
                gb[o] += d;
            }
            if k == 0 {
                break;
            }
            // Hidden activation k is ReLU(z); its derivative is 1 where it is positive.
            let mut next = vec![0.0; layer.n_in];
            for (o, d) in delta.iter().enumerate() {
                if *d == 0.0 {
                    continue;
                }
                for (n, w) in next.iter_mut().zip(&layer.weights[o * layer.n_in..(o + 1) * layer.n_in]) {
                    *n += d * w;
                }
            }
            for (n, a) in next.iter_mut().zip(input) {
                if *a <= 0.0 {
                    *n = 0.0;
                }
            }
            delta = next;
        }
    }

    /// `(ŷ, ∂ŷ/∂Θ)` for one input.
    pub fn forward_grad(&self, features: &[f64]) -> Result<(f64, Vec<f64>)> {
        let cache = self.forward_cached(features)?;
        let mut g = vec![0.0; self.n_params()];
        self.backward_into(&cache, 1.0, &mut g);
        Ok((cache.yhat, g))
    }

    /// Batched [`MlpModel::forward_cached`]; one row per feature vector.
    pub fn forward_batch<'a>(&self, batch: impl ExactSizeIterator<Item = &'a [f64]>) -> Result<BatchCache> {
        let rows = batch.len();
        let norm = &self.normalization;
        let mut x = DMatrix::zeros(rows, self.input_dim);
        for (r, f) in batch.enumerate() {
            if f.len() != self.input_dim {
                return Err(Error::DimensionMismatch {
                    expected: self.input_dim,
                    got: f.len(),
                });
            }
            for (j, v) in f.iter().enumerate() {
                x[(r, j)] = (v - norm.mean[j]) / norm.std[j];
            }
        }
        let mut acts = vec![x];
        for (k, layer) in self.layers.iter().enumerate() {
            // Row-major `n_out × n_in` weights read column-major are `Wᵀ`.
            let wt = DMatrixView::from_slice(&layer.weights, layer.n_in, layer.n_out);
            let mut z = DMatrix::from_fn(rows, layer.n_out, |_, j| layer.bias[j]);
            z.gemm(1.0, acts.last().unwrap(), &wt, 1.0);
            if k + 1 < self.layers.len() {
                z.apply(|v| *v = v.max(0.0));
            }
            acts.push(z);
        }
        let out = acts.pop().unwrap();
        let sigma: Vec<f64> = out.iter().map(|z| logistic(*z)).collect();
        let yhat = sigma.iter().map(|s| self.capacity * s).collect();
        Ok(BatchCache { acts, sigma, yhat })
    }

    /// Adds `Σ_r scales[r] · ∂ŷ_r/∂Θ` into `grad`.
    pub fn backward_batch(&self, cache: &BatchCache, scales: &[f64], grad: &mut [f64]) {
        debug_assert_eq!(grad.len(), self.n_params());
        debug_assert_eq!(scales.len(), cache.sigma.len());
        let mut delta = DMatrix::from_iterator(
            scales.len(),
            1,
            scales
                .iter()
                .zip(&cache.sigma)
                .map(|(w, s)| w * self.capacity * s * (1.0 - s)),
        );
        let mut off = self.n_params();
        for (k, layer) in self.layers.iter().enumerate().rev() {
            off -= layer.n_params();
            let input = &cache.acts[k];
            let (gw, gb) = grad[off..off + layer.n_params()].split_at_mut(layer.weights.len());
            let mut gw = DMatrixViewMut::from_slice(gw, layer.n_in, layer.n_out);
            // An explicit transpose keeps this on the blocked GEMM path.
            gw += input.transpose() * &delta;
            for (g, col) in gb.iter_mut().zip(delta.column_iter()) {
                *g += col.sum();
            }
            if k == 0 {
                break;
            }
            let wt = DMatrixView::from_slice(&layer.weights, layer.n_in, layer.n_out);
            let mut next = &delta * wt.transpose();
            next.zip_apply(input, |n, a| {
                if a <= 0.0 {
                    *n = 0.0;
                }
            });
            delta = next;
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let model: MlpModel = serde_json::from_str(&text)?;
        if model.format != CHECKPOINT_FORMAT {
            return Err(Error::InvalidConfig(format!(
                "unsupported checkpoint format `{}`",
                model.format
            )));
        }
        Ok(model)
    }
}

fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}
