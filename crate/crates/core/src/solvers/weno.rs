//! Fifth-order WENO reconstruction and flux-split conservative derivatives.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WenoParams {
    pub eps: f64,
    pub p: i32,
    pub optimal: [f64; 3],
}

impl Default for WenoParams {
    fn default() -> Self {
        Self { eps: 1e-6, p: 2, optimal: [0.1, 0.6, 0.3] }
    }
}

/// Intermediate quantities of one reconstruction at `x_{i+1/2}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WenoWorkspace {
    pub candidates: [f64; 3],
    pub smoothness: [f64; 3],
    pub weights: [f64; 3],
    pub eps: f64,
    pub p: i32,
    pub optimal: [f64; 3],
}

impl WenoWorkspace {
    pub fn value(&self) -> f64 {
        self.weights[0] * self.candidates[0]
            + self.weights[1] * self.candidates[1]
            + self.weights[2] * self.candidates[2]
    }
}

/// Third-order candidate values at `i+1/2` from `f = (f_{i-2}, ..., f_{i+2})`.
#[inline]
pub fn candidates(f: &[f64; 5]) -> [f64; 3] {
    [
        (2.0 * f[0] - 7.0 * f[1] + 11.0 * f[2]) / 6.0,
        (-f[1] + 5.0 * f[2] + 2.0 * f[3]) / 6.0,
        (2.0 * f[2] + 5.0 * f[3] - f[4]) / 6.0,
    ]
}

#[inline]
pub fn smoothness_indicators(f: &[f64; 5]) -> [f64; 3] {
    let c = 13.0 / 12.0;
    let sq = |v: f64| v * v;
    [
        c * sq(f[0] - 2.0 * f[1] + f[2]) + 0.25 * sq(f[0] - 4.0 * f[1] + 3.0 * f[2]),
        c * sq(f[1] - 2.0 * f[2] + f[3]) + 0.25 * sq(f[1] - f[3]),
        c * sq(f[2] - 2.0 * f[3] + f[4]) + 0.25 * sq(3.0 * f[2] - 4.0 * f[3] + f[4]),
    ]
}

pub fn weno5_workspace(f: &[f64; 5], params: &WenoParams) -> Result<WenoWorkspace> {
    if f.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical(format!("non-finite WENO input {f:?}")));
    }
    if !(params.eps > 0.0) || params.p < 1 {
        return Err(Error::InvalidArgument("WENO needs eps > 0 and p >= 1".into()));
    }
    Ok(workspace_unchecked(f, params))
}

#[inline]
fn workspace_unchecked(f: &[f64; 5], params: &WenoParams) -> WenoWorkspace {
    let cand = candidates(f);
    let is = smoothness_indicators(f);
    let mut alpha = [0.0; 3];
    for k in 0..3 {
        alpha[k] = params.optimal[k] / (params.eps + is[k]).powi(params.p);
    }
    let s = alpha[0] + alpha[1] + alpha[2];
    WenoWorkspace {
        candidates: cand,
        smoothness: is,
        weights: [alpha[0] / s, alpha[1] / s, alpha[2] / s],
        eps: params.eps,
        p: params.p,
        optimal: params.optimal,
    }
}

/// `f_hat_{i+1/2}` from `(f_{i-2}, ..., f_{i+2})`.
pub fn weno5_reconstruct(f: &[f64; 5], eps: f64, p: i32) -> Result<f64> {
    let params = WenoParams { eps, p, ..WenoParams::default() };
    Ok(weno5_workspace(f, &params)?.value())
}

/// Conservative WENO approximation of `d/dx f(u)` on a periodic grid with
/// global Lax-Friedrichs splitting `f± = (f(u) ± alpha u) / 2`.
pub fn flux_divergence(
    u: &[f64],
    flux: impl Fn(f64) -> f64,
    alpha: f64,
    dx: f64,
    params: &WenoParams,
) -> Result<Vec<f64>> {
    let n = u.len();
    if n < 5 {
        return Err(Error::InvalidArgument("WENO needs at least 5 grid points".into()));
    }
    let mut fp = Vec::with_capacity(n);
    let mut fm = Vec::with_capacity(n);
    for &v in u {
        if !v.is_finite() {
            return Err(Error::Numerical("non-finite field in WENO flux".into()));
        }
        let f = flux(v);
        fp.push(0.5 * (f + alpha * v));
        fm.push(0.5 * (f - alpha * v));
    }
    let at = |a: &[f64], i: usize, o: isize| a[(i as isize + o).rem_euclid(n as isize) as usize];
    // Interface flux at i+1/2 for i = 0..n.
    let mut face = Vec::with_capacity(n);
    for i in 0..n {
        let plus = [at(&fp, i, -2), at(&fp, i, -1), fp[i], at(&fp, i, 1), at(&fp, i, 2)];
        let minus = [at(&fm, i, 3), at(&fm, i, 2), at(&fm, i, 1), fm[i], at(&fm, i, -1)];
        let hp = workspace_unchecked(&plus, params).value();
        let hm = workspace_unchecked(&minus, params).value();
        face.push(hp + hm);
    }
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let left = face[(i + n - 1) % n];
        let d = (face[i] - left) / dx;
        if !d.is_finite() {
            return Err(Error::Numerical(format!("non-finite WENO flux difference at {i}")));
        }
        out.push(d);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_is_exact() {
        for c in [0.0, 1.3, -7.25] {
            assert!((weno5_reconstruct(&[c; 5], 1e-6, 2).unwrap() - c).abs() <= 1e-15 * (1.0 + c.abs()));
        }
    }

    #[test]
    fn weights_are_convex() {
        let ws = weno5_workspace(&[0.0, 0.0, 1.0, 1.0, 1.0], &WenoParams::default()).unwrap();
        let s: f64 = ws.weights.iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
        assert!(ws.weights.iter().all(|w| *w >= 0.0));
        assert!(ws.smoothness.iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn smooth_data_uses_optimal_weights() {
        let f = [1.0, 1.0001, 1.0002, 1.0003, 1.0004];
        let ws = weno5_workspace(&f, &WenoParams::default()).unwrap();
        for (w, c) in ws.weights.iter().zip([0.1, 0.6, 0.3]) {
            assert!((w - c).abs() < 1e-6);
        }
    }

    /// The closed-form indicators equal
    /// `sum_l int_{-1/2}^{1/2} (d^l p / dx^l)^2 dx` for the quadratic whose
    /// cell averages are the three stencil values (unit spacing).
    #[test]
    fn closed_form_matches_quadrature() {
        let f = [0.3, -1.1, 2.4, 0.7, -0.2];
        let is = smoothness_indicators(&f);
        for k in 0..3 {
            let (a, b, c) = (f[k], f[k + 1], f[k + 2]);
            // cell averages on cells centred at -1, 0, 1 (relative to the
            // stencil centre) of p(x) = q0 + q1 x + q2 x^2
            let q2 = (a - 2.0 * b + c) / 2.0;
            let q1 = (c - a) / 2.0;
            // integrate over cell i, which sits at offset 1 - k from the stencil centre
            let centre = 1.0 - k as f64;
            let (lo, hi) = (centre - 0.5, centre + 0.5);
            let gauss = [(-0.774_596_669_241_483_4, 5.0 / 9.0), (0.0, 8.0 / 9.0), (0.774_596_669_241_483_4, 5.0 / 9.0)];
            let mut integral = 0.0;
            for (t, w) in gauss {
                let x = 0.5 * (lo + hi) + 0.5 * (hi - lo) * t;
                let d1 = q1 + 2.0 * q2 * x;
                let d2 = 2.0 * q2;
                integral += 0.5 * (hi - lo) * w * (d1 * d1 + d2 * d2);
            }
            assert!((integral - is[k]).abs() < 1e-12 * integral.max(1.0), "k={k}: {integral} vs {}", is[k]);
        }
    }

    #[test]
    fn linear_data_is_exact() {
        let (a, b) = (0.7, -1.9);
        let f: Vec<f64> = (-2..=2).map(|j| a + b * j as f64).collect();
        let v = weno5_reconstruct(&f.try_into().unwrap(), 1e-6, 2).unwrap();
        assert!((v - (a + 0.5 * b)).abs() < 1e-12);
    }

    #[test]
    fn non_finite_is_error() {
        assert!(weno5_reconstruct(&[0.0, f64::NAN, 0.0, 0.0, 0.0], 1e-6, 2).is_err());
    }

    #[test]
    fn fifth_order_on_smooth_flux() {
        // cell-average data of sin: averages of f over cells give interface
        // values that converge at fifth order
        let mut errs = vec![];
        for &n in &[32usize, 64, 128] {
            let dx = 2.0 * std::f64::consts::PI / n as f64;
            let avg: Vec<f64> = (0..n)
                .map(|j| {
                    let x = j as f64 * dx;
                    ((x - 0.5 * dx).cos() - (x + 0.5 * dx).cos()) / dx
                })
                .collect();
            let mut err = 0.0f64;
            for i in 0..n {
                let g = |o: isize| avg[(i as isize + o).rem_euclid(n as isize) as usize];
                let v = weno5_reconstruct(&[g(-2), g(-1), g(0), g(1), g(2)], 1e-6, 2).unwrap();
                err = err.max((v - ((i as f64 + 0.5) * dx).sin()).abs());
            }
            errs.push(err);
        }
        let order = (errs[1] / errs[2]).log2();
        assert!(order >= 4.5, "order {order}, errors {errs:?}");
    }
}
