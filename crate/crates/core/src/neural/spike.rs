//! Fitting a discontinuous "spike" with an MLP versus a polynomial with the
//! same number of coefficients.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use super::{AdamState, Mlp};
use crate::error::{invalid, Error, Result};

/// `(a + a|x-b|/(x-b)) / (x+c)^2`, undefined at `x = b`.
pub fn spike_function(x: f64, a: f64, b: f64, c: f64) -> f64 {
    (a + a * (x - b).abs() / (x - b)) / ((x + c) * (x + c))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpikeFitConfig {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    /// Training samples at cell midpoints of `[0, 1]`.
    pub n_train: usize,
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for SpikeFitConfig {
    fn default() -> Self {
        Self {
            a: 0.5,
            b: 0.25,
            c: 0.1,
            n_train: 400,
            hidden: vec![8, 8],
            epochs: 3000,
            batch: 50,
            lr: 1e-2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpikeFitReport {
    pub n_params: usize,
    pub poly_degree: usize,
    pub mlp_max_error: f64,
    pub poly_max_error: f64,
    pub n_heldout: usize,
}

/// Trains an MLP and a least-squares Chebyshev polynomial with the same
/// number of free parameters on the same samples; errors are measured on
/// held-out points half-way between training samples.
pub fn spike_fit_demo(cfg: &SpikeFitConfig) -> Result<SpikeFitReport> {
    if cfg.n_train < 4 {
        return invalid("spike fit needs at least 4 samples");
    }
    let n = cfg.n_train;
    let xs: Vec<f64> = (0..n).map(|j| (j as f64 + 0.5) / n as f64).collect();
    let held: Vec<f64> = (1..n)
        .map(|j| j as f64 / n as f64)
        .filter(|&x| (x - cfg.b).abs() > 1e-12)
        .collect();
    if xs.iter().any(|&x| (x - cfg.b).abs() < 1e-12) {
        return invalid("training grid contains the singular point x = b");
    }
    let f = |x: f64| spike_function(x, cfg.a, cfg.b, cfg.c);
    let ys: Vec<f64> = xs.iter().map(|&x| f(x)).collect();
    let truth: Vec<f64> = held.iter().map(|&x| f(x)).collect();

    let mut widths = vec![1];
    widths.extend(&cfg.hidden);
    widths.push(1);
    let mut mlp = Mlp::init_he(&widths, cfg.seed)?;
    let scale = ys.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    // Inputs mapped to [-1, 1], targets to [-1, 1].
    let to_in = |x: f64| 2.0 * x - 1.0;
    let mut adam = AdamState::with_lr(mlp.n_params(), cfg.lr);
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed ^ 0x5eed);
    let mut order: Vec<usize> = (0..n).collect();
    let batch = cfg.batch.clamp(1, n);
    for epoch in 0..cfg.epochs {
        // Step decay over the last half of training.
        adam.lr = if epoch < cfg.epochs / 2 {
            cfg.lr
        } else if epoch < 3 * cfg.epochs / 4 {
            cfg.lr * 0.1
        } else {
            cfg.lr * 0.01
        };
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch) {
            let inputs: Vec<f64> = chunk.iter().map(|&j| to_in(xs[j])).collect();
            let cache = mlp.forward_cached(&inputs, chunk.len())?;
            let d_out: Vec<f64> = cache
                .output()
                .iter()
                .zip(chunk)
                .map(|(p, &j)| 2.0 * (p - ys[j] / scale) / chunk.len() as f64)
                .collect();
            let mut g = vec![0.0; mlp.n_params()];
            mlp.backward(&cache, &d_out, &mut g);
            adam.step(mlp.params_mut(), &g)?;
        }
        if mlp.params().iter().any(|p| !p.is_finite()) {
            return Err(Error::Diverged { epoch, detail: "non-finite MLP parameters".into() });
        }
    }
    let held_in: Vec<f64> = held.iter().map(|&x| to_in(x)).collect();
    let pred = mlp.forward_batch(&held_in, held.len())?;
    let mlp_max_error = pred
        .iter()
        .zip(&truth)
        .map(|(p, t)| (p * scale - t).abs())
        .fold(0.0, f64::max);

    let n_params = mlp.n_params();
    let degree = n_params - 1;
    let coeffs = chebyshev_lsq(&xs.iter().map(|&x| to_in(x)).collect::<Vec<_>>(), &ys, degree)?;
    let poly_max_error = held
        .iter()
        .zip(&truth)
        .map(|(&x, t)| (chebyshev_eval(&coeffs, to_in(x)) - t).abs())
        .fold(0.0, f64::max);

    Ok(SpikeFitReport {
        n_params,
        poly_degree: degree,
        mlp_max_error,
        poly_max_error,
        n_heldout: held.len(),
    })
}

fn chebyshev_row(t: f64, degree: usize) -> Vec<f64> {
    let mut row = vec![0.0; degree + 1];
    row[0] = 1.0;
    if degree >= 1 {
        row[1] = t;
    }
    for k in 2..=degree {
        row[k] = 2.0 * t * row[k - 1] - row[k - 2];
    }
    row
}

fn chebyshev_eval(coeffs: &[f64], t: f64) -> f64 {
    chebyshev_row(t, coeffs.len() - 1)
        .iter()
        .zip(coeffs)
        .map(|(a, b)| a * b)
        .sum()
}

/// Least-squares (minimum-norm when under-determined) Chebyshev fit on `[-1, 1]`.
fn chebyshev_lsq(ts: &[f64], ys: &[f64], degree: usize) -> Result<Vec<f64>> {
    let a = DMatrix::from_fn(ts.len(), degree + 1, |i, k| chebyshev_row(ts[i], degree)[k]);
    let b = DVector::from_column_slice(ys);
    let svd = a.svd(true, true);
    let sol = svd
        .solve(&b, 1e-12)
        .map_err(|e| Error::Numerical(format!("polynomial least squares failed: {e}")))?;
    Ok(sol.iter().copied().collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spike_values() {
        assert!((spike_function(0.5, 0.5, 0.25, 0.1) - 1.0 / 0.36).abs() < 1e-12);
        assert!((spike_function(0.5, 0.5, 0.25, 0.1) - 2.7778).abs() < 1e-4);
        assert_eq!(spike_function(0.0, 0.5, 0.25, 0.1), 0.0);
    }

    #[test]
    fn chebyshev_fit_reproduces_polynomial() {
        let ts: Vec<f64> = (0..50).map(|i| -1.0 + 2.0 * i as f64 / 49.0).collect();
        let ys: Vec<f64> = ts.iter().map(|t| 1.0 - 2.0 * t + 0.5 * t * t * t).collect();
        let c = chebyshev_lsq(&ts, &ys, 5).unwrap();
        for &t in &[-0.9, 0.1, 0.77] {
            let expect = 1.0 - 2.0 * t + 0.5 * t * t * t;
            assert!((chebyshev_eval(&c, t) - expect).abs() < 1e-10);
        }
    }
}
