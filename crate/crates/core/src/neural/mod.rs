//! Dense ELU networks, a reverse-mode tape over field-valued primitives,
//! and the Adam optimizer.

mod adam;
mod spike;
mod tape;

pub use adam::AdamState;
pub use spike::{spike_fit_demo, spike_function, SpikeFitConfig, SpikeFitReport};
pub use tape::{grad, Gradients, NodeId, Tape};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Exponential linear unit with `alpha = 1`.
#[inline]
pub fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

/// Derivative of [`elu`] expressed through its output `a = elu(z)`.
#[inline]
fn elu_grad_from_output(a: f64) -> f64 {
    if a > 0.0 {
        1.0
    } else {
        a + 1.0
    }
}

/// Multi-layer perceptron with ELU hidden layers and a linear output layer.
///
/// Parameters live in one flat vector; layer `q` stores its `out x in`
/// weight matrix row-major followed by its bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    widths: Vec<usize>,
    params: Vec<f64>,
}

/// Per-layer intermediate values of a batched forward pass.
#[derive(Debug, Clone)]
pub struct BatchCache {
    batch: usize,
    /// `acts[0]` is the input batch, `acts[q]` the output of layer `q`.
    acts: Vec<Vec<f64>>,
}

impl BatchCache {
    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("cache has at least the input layer")
    }
}

impl Mlp {
    /// All-zero network with the given layer widths (input first).
    pub fn zeros(widths: &[usize]) -> Result<Self> {
        if widths.len() < 2 || widths.iter().any(|&w| w == 0) {
            return invalid(format!("invalid layer widths {widths:?}"));
        }
        let n = widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        Ok(Self {
            widths: widths.to_vec(),
            params: vec![0.0; n],
        })
    }

    /// Uniform He-style initialization, `U(-sqrt(6/fan_in), sqrt(6/fan_in))`
    /// weights and zero biases.
    pub fn init_he(widths: &[usize], seed: u64) -> Result<Self> {
        let mut mlp = Self::zeros(widths)?;
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        for q in 0..mlp.n_layers() {
            let (rows, cols) = mlp.layer_shape(q);
            let limit = (6.0 / cols as f64).sqrt();
            let off = mlp.layer_offset(q);
            for w in &mut mlp.params[off..off + rows * cols] {
                *w = rng.random_range(-limit..limit);
            }
        }
        Ok(mlp)
    }

    /// Builds a network from `(rows, cols, W row-major, b)` layers.
    pub fn from_layers(layers: Vec<(usize, usize, Vec<f64>, Vec<f64>)>) -> Result<Self> {
        if layers.is_empty() {
            return invalid("network needs at least one layer");
        }
        let mut widths = vec![layers[0].1];
        let mut params = Vec::new();
        for (q, (rows, cols, w, b)) in layers.into_iter().enumerate() {
            if cols != *widths.last().unwrap() {
                return invalid(format!("layer {q} expects {cols} inputs but previous layer has {} outputs", widths.last().unwrap()));
            }
            if w.len() != rows * cols || b.len() != rows {
                return invalid(format!("layer {q} has inconsistent weight/bias sizes"));
            }
            params.extend(w);
            params.extend(b);
            widths.push(rows);
        }
        let mlp = Self::zeros(&widths)?;
        Ok(Self { params, ..mlp })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn n_layers(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// `(rows, cols) = (out, in)` of layer `q`.
    pub fn layer_shape(&self, q: usize) -> (usize, usize) {
        (self.widths[q + 1], self.widths[q])
    }

    pub fn layer_offset(&self, q: usize) -> usize {
        self.widths[..q + 1]
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }

    pub fn weights(&self, q: usize) -> &[f64] {
        let (r, c) = self.layer_shape(q);
        let off = self.layer_offset(q);
        &self.params[off..off + r * c]
    }

    pub fn bias(&self, q: usize) -> &[f64] {
        let (r, c) = self.layer_shape(q);
        let off = self.layer_offset(q) + r * c;
        &self.params[off..off + r]
    }

    /// Mask selecting weight entries (not biases) of the flat parameter vector.
    pub fn weight_mask(&self) -> Vec<bool> {
        let mut mask = Vec::with_capacity(self.params.len());
        for q in 0..self.n_layers() {
            let (r, c) = self.layer_shape(q);
            mask.extend(std::iter::repeat_n(true, r * c));
            mask.extend(std::iter::repeat_n(false, r));
        }
        mask
    }

    /// `sum_q ||W_q||_F^2`.
    pub fn weight_norm_sq(&self) -> f64 {
        (0..self.n_layers())
            .map(|q| self.weights(q).iter().map(|w| w * w).sum::<f64>())
            .sum()
    }

    pub fn forward(&self, patch: &[f64]) -> Result<f64> {
        if self.output_width() != 1 {
            return invalid("scalar forward needs a single output");
        }
        Ok(self.forward_batch(patch, 1)?[0])
    }

    /// Evaluates `batch` inputs stored row-major (`batch x input_width`).
    pub fn forward_batch(&self, inputs: &[f64], batch: usize) -> Result<Vec<f64>> {
        Ok(self.forward_cached(inputs, batch)?.acts.pop().unwrap())
    }

    pub fn forward_cached(&self, inputs: &[f64], batch: usize) -> Result<BatchCache> {
        if inputs.len() != batch * self.input_width() {
            return invalid(format!(
                "expected {batch} x {} inputs, got {} values",
                self.input_width(),
                inputs.len()
            ));
        }
        let mut acts = Vec::with_capacity(self.widths.len());
        acts.push(inputs.to_vec());
        for q in 0..self.n_layers() {
            let (rows, cols) = self.layer_shape(q);
            let w = self.weights(q);
            let b = self.bias(q);
            // W^T so the inner loop runs over contiguous outputs.
            let mut wt = vec![0.0; rows * cols];
            for o in 0..rows {
                for k in 0..cols {
                    wt[k * rows + o] = w[o * cols + k];
                }
            }
            let x = &acts[q];
            let mut out = vec![0.0; batch * rows];
            for (orow, xrow) in out.chunks_exact_mut(rows).zip(x.chunks_exact(cols)) {
                orow.copy_from_slice(b);
                for (k, &xk) in xrow.iter().enumerate() {
                    let wk = &wt[k * rows..(k + 1) * rows];
                    for (oo, &wv) in orow.iter_mut().zip(wk) {
                        *oo += wv * xk;
                    }
                }
            }
            if q + 1 < self.n_layers() {
                out.iter_mut().for_each(|v| *v = elu(*v));
            }
            acts.push(out);
        }
        Ok(BatchCache { batch, acts })
    }

    /// Back-propagates `d_out` (`batch x output_width`) through a cached
    /// forward pass. Parameter gradients are added into `grad_params`;
    /// the returned vector holds the input gradients.
    pub fn backward(&self, cache: &BatchCache, d_out: &[f64], grad_params: &mut [f64]) -> Vec<f64> {
        let batch = cache.batch;
        debug_assert_eq!(d_out.len(), batch * self.output_width());
        debug_assert_eq!(grad_params.len(), self.params.len());
        let mut delta = d_out.to_vec();
        for q in (0..self.n_layers()).rev() {
            let (rows, cols) = self.layer_shape(q);
            let w = self.weights(q);
            let off = self.layer_offset(q);
            let a_prev = &cache.acts[q];
            {
                let (gw, gb) = grad_params[off..off + rows * cols + rows].split_at_mut(rows * cols);
                for (drow, arow) in delta.chunks_exact(rows).zip(a_prev.chunks_exact(cols)) {
                    for (o, &d) in drow.iter().enumerate() {
                        if d == 0.0 {
                            continue;
                        }
                        gb[o] += d;
                        for (g, &a) in gw[o * cols..(o + 1) * cols].iter_mut().zip(arow) {
                            *g += d * a;
                        }
                    }
                }
            }
            let mut prev = vec![0.0; batch * cols];
            for (prow, drow) in prev.chunks_exact_mut(cols).zip(delta.chunks_exact(rows)) {
                for (o, &d) in drow.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    for (p, &wv) in prow.iter_mut().zip(&w[o * cols..(o + 1) * cols]) {
                        *p += d * wv;
                    }
                }
            }
            if q > 0 {
                for (p, &a) in prev.iter_mut().zip(a_prev) {
                    *p *= elu_grad_from_output(a);
                }
            }
            delta = prev;
        }
        delta
    }

    /// Product of the induced infinity norms of the weight matrices; a
    /// Lipschitz bound in the max-norm since ELU is 1-Lipschitz.
    pub fn lipschitz_bound_inf(&self) -> f64 {
        (0..self.n_layers())
            .map(|q| {
                let (_, c) = self.layer_shape(q);
                self.weights(q)
                    .chunks_exact(c)
                    .map(|row| row.iter().map(|w| w.abs()).sum::<f64>())
                    .fold(0.0, f64::max)
            })
            .product()
    }
}
