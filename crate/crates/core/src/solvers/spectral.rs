//! Fourier pseudo-spectral operators and the ETDRK4 stiff integrator.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{invalid, Error, Result};

/// Points on the contour used to evaluate the phi-functions.
pub const CONTOUR_POINTS: usize = 32;

/// FFT plans and wavenumbers for a periodic grid of `n` points on length `length`.
#[derive(Clone)]
pub struct SpectralOps {
    n: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    /// Wavenumbers for even-order derivatives, Nyquist kept.
    k_even: Vec<f64>,
    /// Wavenumbers for odd-order derivatives, Nyquist set to zero.
    k_odd: Vec<f64>,
    /// 2/3-rule mask.
    dealias: Vec<f64>,
}

impl std::fmt::Debug for SpectralOps {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SpectralOps").field("n", &self.n).finish()
    }
}

impl SpectralOps {
    pub fn new(n: usize, length: f64) -> Result<Self> {
        if n < 4 || !(length > 0.0) {
            return invalid("spectral grid needs n >= 4 and a positive length");
        }
        let mut planner = FftPlanner::new();
        let scale = 2.0 * PI / length;
        let mut k_even = Vec::with_capacity(n);
        let mut k_odd = Vec::with_capacity(n);
        let mut dealias = Vec::with_capacity(n);
        for j in 0..n {
            let signed = if j <= n / 2 { j as i64 } else { j as i64 - n as i64 };
            let k = scale * signed as f64;
            k_even.push(k);
            k_odd.push(if n % 2 == 0 && j == n / 2 { 0.0 } else { k });
            // keep |signed| < n/3
            dealias.push(if 3 * signed.unsigned_abs() < n as u64 { 1.0 } else { 0.0 });
        }
        Ok(Self {
            n,
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
            k_even,
            k_odd,
            dealias,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn k_even(&self) -> &[f64] {
        &self.k_even
    }

    pub fn k_odd(&self) -> &[f64] {
        &self.k_odd
    }

    pub fn dealias_mask(&self) -> &[f64] {
        &self.dealias
    }

    pub fn fft(&self, u: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = u.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.forward.process(&mut buf);
        buf
    }

    pub fn ifft(&self, v: &[Complex64]) -> Vec<f64> {
        let mut buf = v.to_vec();
        self.inverse.process(&mut buf);
        let s = 1.0 / self.n as f64;
        buf.iter().map(|c| c.re * s).collect()
    }

    /// Restores the conjugate symmetry of a real field's spectrum, which
    /// rounding would otherwise let drift (and grow under unstable linear modes).
    pub fn symmetrize(&self, v: &mut [Complex64]) {
        let n = self.n;
        v[0].im = 0.0;
        for j in 1..n.div_ceil(2) {
            let avg = 0.5 * (v[j] + v[n - j].conj());
            v[j] = avg;
            v[n - j] = avg.conj();
        }
        if n % 2 == 0 {
            v[n / 2].im = 0.0;
        }
    }

    /// `-ik * FFT(u^2)` with `u` and the product dealiased.
    pub fn conservative_square(&self, v: &[Complex64]) -> Vec<Complex64> {
        let masked: Vec<Complex64> = v.iter().zip(&self.dealias).map(|(c, m)| c * m).collect();
        let u = self.ifft(&masked);
        let sq: Vec<f64> = u.iter().map(|x| x * x).collect();
        let w = self.fft(&sq);
        w.iter()
            .zip(self.k_odd.iter().zip(&self.dealias))
            .map(|(c, (k, m))| Complex64::new(0.0, -k) * c * m)
            .collect()
    }

    /// Spectral `d^order u / dx^order` of a real field.
    pub fn derivative(&self, u: &[f64], order: u32) -> Vec<f64> {
        let k = if order % 2 == 1 { &self.k_odd } else { &self.k_even };
        let v = self.fft(u);
        let ik = |kk: f64| Complex64::new(0.0, kk).powu(order);
        let d: Vec<Complex64> = v.iter().zip(k).map(|(c, &kk)| c * ik(kk)).collect();
        self.ifft(&d)
    }
}

/// Precomputed ETDRK4 coefficients for a diagonal linear part.
#[derive(Debug, Clone)]
pub struct Etdrk4 {
    dt: f64,
    e: Vec<Complex64>,
    e2: Vec<Complex64>,
    q: Vec<Complex64>,
    f1: Vec<Complex64>,
    f2: Vec<Complex64>,
    f3: Vec<Complex64>,
}

impl Etdrk4 {
    pub fn new(symbol: &[Complex64], dt: f64) -> Result<Self> {
        if !(dt > 0.0) {
            return invalid(format!("time step must be positive, got {dt}"));
        }
        let roots: Vec<Complex64> = (1..=CONTOUR_POINTS)
            .map(|j| Complex64::new(0.0, 2.0 * PI * (j as f64 - 0.5) / CONTOUR_POINTS as f64).exp())
            .collect();
        let m = CONTOUR_POINTS as f64;
        let mut out = Self {
            dt,
            e: Vec::with_capacity(symbol.len()),
            e2: Vec::with_capacity(symbol.len()),
            q: Vec::with_capacity(symbol.len()),
            f1: Vec::with_capacity(symbol.len()),
            f2: Vec::with_capacity(symbol.len()),
            f3: Vec::with_capacity(symbol.len()),
        };
        for &lam in symbol {
            let l = lam * dt;
            out.e.push(l.exp());
            out.e2.push((l / 2.0).exp());
            let (mut q, mut f1, mut f2, mut f3) = (Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0));
            for r in &roots {
                let z = l + r;
                let ez = z.exp();
                let ez2 = (z / 2.0).exp();
                q += (ez2 - 1.0) / z;
                f1 += (-4.0 - z + ez * (4.0 - 3.0 * z + z * z)) / (z * z * z);
                f2 += (2.0 + z + ez * (z - 2.0)) / (z * z * z);
                f3 += (-4.0 - 3.0 * z - z * z + ez * (4.0 - z)) / (z * z * z);
            }
            out.q.push(q * dt / m);
            out.f1.push(f1 * dt / m);
            out.f2.push(f2 * dt / m);
            out.f3.push(f3 * dt / m);
        }
        if out.e.iter().chain(&out.f1).any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(Error::Numerical("non-finite ETDRK4 coefficients".into()));
        }
        Ok(out)
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn len(&self) -> usize {
        self.e.len()
    }

    pub fn is_empty(&self) -> bool {
        self.e.is_empty()
    }

    /// Advances `v` from `t` to `t + dt`; `nonlinear(v, t)` returns the
    /// spectrum of the nonlinear term.
    pub fn step<N>(&self, v: &[Complex64], t: f64, mut nonlinear: N) -> Result<Vec<Complex64>>
    where
        N: FnMut(&[Complex64], f64) -> Result<Vec<Complex64>>,
    {
        if v.len() != self.e.len() {
            return invalid(format!("spectrum has {} modes, symbol {}", v.len(), self.e.len()));
        }
        let check = |w: &[Complex64]| -> Result<()> {
            if w.iter().all(|c| c.re.is_finite() && c.im.is_finite()) {
                Ok(())
            } else {
                Err(Error::Numerical("NaN in spectrum".into()))
            }
        };
        check(v)?;
        let h = self.dt;
        let nv = nonlinear(v, t)?;
        let a: Vec<Complex64> = (0..v.len()).map(|j| self.e2[j] * v[j] + self.q[j] * nv[j]).collect();
        let na = nonlinear(&a, t + h / 2.0)?;
        let b: Vec<Complex64> = (0..v.len()).map(|j| self.e2[j] * v[j] + self.q[j] * na[j]).collect();
        let nb = nonlinear(&b, t + h / 2.0)?;
        let c: Vec<Complex64> = (0..v.len())
            .map(|j| self.e2[j] * a[j] + self.q[j] * (2.0 * nb[j] - nv[j]))
            .collect();
        let nc = nonlinear(&c, t + h)?;
        let out: Vec<Complex64> = (0..v.len())
            .map(|j| {
                self.e[j] * v[j]
                    + nv[j] * self.f1[j]
                    + 2.0 * (na[j] + nb[j]) * self.f2[j]
                    + nc[j] * self.f3[j]
            })
            .collect();
        check(&out)?;
        Ok(out)
    }
}

/// One ETDRK4 step; coefficients are rebuilt on every call, so prefer
/// [`Etdrk4`] when stepping repeatedly.
pub fn spectral_step_etdrk4<N>(
    v: &[Complex64],
    symbol: &[Complex64],
    nonlinear: N,
    dt: f64,
) -> Result<Vec<Complex64>>
where
    N: FnMut(&[Complex64], f64) -> Result<Vec<Complex64>>,
{
    if v.len() != symbol.len() {
        return invalid("linear symbol length differs from spectrum length");
    }
    Etdrk4::new(symbol, dt)?.step(v, 0.0, nonlinear)
}
