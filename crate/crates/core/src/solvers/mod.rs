//! Classical reference numerics: finite-difference stencils, WENO5 with flux
//! splitting, TVD Runge-Kutta stepping and an ETDRK4 spectral integrator.

mod fd;
mod rk;
mod spectral;
mod weno;

pub use fd::{apply_weights, centered, centered_offsets, fd_weights, FdStencil};
pub use rk::{cfl_dt, combine, rk3_tvd_step, rk3_tvd_step_signed};
pub use spectral::{spectral_step_etdrk4, Etdrk4, SpectralOps, CONTOUR_POINTS};
pub use weno::{
    candidates, flux_divergence, smoothness_indicators, weno5_reconstruct, weno5_workspace,
    WenoParams, WenoWorkspace,
};

pub use rustfft::num_complex::Complex64;

use serde::{Deserialize, Serialize};

use crate::datagen::ForcingParams;
use crate::error::{invalid, Error, Result};
use crate::grid::{Grid, Trajectory};

/// Solutions with any `|u|` above this are reported as blow-up.
pub const BLOW_UP: f64 = 1e6;
/// Default CFL safety factor.
pub const CFL_SAFETY: f64 = 0.9;
/// Spectral step used for KS when `dt` is automatic.
pub const KS_SPECTRAL_DT: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PdeKind {
    ForcedBurgers,
    Ks,
    Kdv,
    Advection,
}

/// `u_t + f(u)_x = ...` with the coefficients that `kind` reads:
/// Burgers `D`, KdV `delta`, advection `c`. KS has none.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdeProblem {
    pub kind: PdeKind,
    #[serde(default)]
    pub viscosity: f64,
    #[serde(default)]
    pub dispersion: f64,
    #[serde(default)]
    pub speed: f64,
    #[serde(default)]
    pub forcing: Option<ForcingParams>,
}

impl PdeProblem {
    pub fn burgers(viscosity: f64, forcing: Option<ForcingParams>) -> Self {
        Self { kind: PdeKind::ForcedBurgers, viscosity, dispersion: 0.0, speed: 0.0, forcing }
    }

    pub fn ks() -> Self {
        Self { kind: PdeKind::Ks, viscosity: 0.0, dispersion: 0.0, speed: 0.0, forcing: None }
    }

    pub fn kdv(dispersion: f64) -> Self {
        Self { kind: PdeKind::Kdv, viscosity: 0.0, dispersion, speed: 0.0, forcing: None }
    }

    pub fn advection(speed: f64) -> Self {
        Self { kind: PdeKind::Advection, viscosity: 0.0, dispersion: 0.0, speed, forcing: None }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.viscosity >= 0.0 && self.viscosity.is_finite()) {
            return invalid(format!("viscosity must be finite and >= 0, got {}", self.viscosity));
        }
        if !self.dispersion.is_finite() || !self.speed.is_finite() {
            return invalid("PDE coefficients must be finite");
        }
        Ok(())
    }

    /// Flux `f(u)` of the conservative convection term.
    pub fn flux(&self, u: f64) -> f64 {
        match self.kind {
            PdeKind::Advection => self.speed * u,
            _ => u * u,
        }
    }

    /// `|f'(u)|`.
    pub fn wave_speed(&self, u: f64) -> f64 {
        match self.kind {
            PdeKind::Advection => self.speed.abs(),
            _ => 2.0 * u.abs(),
        }
    }

    pub fn max_wave_speed(&self, u: &[f64]) -> f64 {
        u.iter().fold(0.0, |m, &v| f64::max(m, self.wave_speed(v)))
    }

    /// Known forcing on the grid at time `t`, if any.
    pub fn forcing_field(&self, grid: &Grid, t: f64) -> Option<Vec<f64>> {
        self.forcing.as_ref().map(|f| f.eval(&grid.points(), t))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    WenoRk3,
    Spectral,
}

/// WENO right-hand side of forced Burgers:
/// `-(u^2)_x + D u_xx + forcing`.
pub fn weno_rhs_burgers(u: &[f64], diffusion: f64, forcing: &[f64], dx: f64) -> Result<Vec<f64>> {
    if forcing.len() != u.len() {
        return invalid("forcing and field lengths differ");
    }
    if !(dx > 0.0) {
        return invalid("dx must be positive");
    }
    let problem = PdeProblem::burgers(diffusion, None);
    let alpha = problem.max_wave_speed(u);
    let mut out = flux_divergence(u, |v| v * v, alpha, dx, &WenoParams::default())?;
    let lap = fd_weights(2, 2, &[-1, 0, 1])?;
    let d2 = apply_weights(lap.offsets(), &lap.scaled_weights(dx, diffusion), u);
    for ((o, d), f) in out.iter_mut().zip(&d2).zip(forcing) {
        *o = -*o + d + f;
    }
    Ok(out)
}

/// Finite-difference (WENO convection, centred linear terms) right-hand side.
#[derive(Debug, Clone)]
pub struct FdRhs {
    problem: PdeProblem,
    grid: Grid,
    points: Vec<f64>,
    linear: Vec<(Vec<i64>, Vec<f64>)>,
    weno: WenoParams,
}

impl FdRhs {
    pub fn new(problem: &PdeProblem, grid: &Grid) -> Result<Self> {
        problem.validate()?;
        let dx = grid.dx();
        let mut linear = vec![];
        let mut push = |l: usize, coef: f64| -> Result<()> {
            if coef != 0.0 {
                let s = if l == 2 { fd_weights(2, 2, &[-1, 0, 1])? } else { centered(l, 2)? };
                linear.push((s.offsets().to_vec(), s.scaled_weights(dx, coef)));
            }
            Ok(())
        };
        match problem.kind {
            PdeKind::ForcedBurgers => push(2, problem.viscosity)?,
            PdeKind::Ks => {
                push(2, -1.0)?;
                push(4, -1.0)?;
            }
            PdeKind::Kdv => push(3, -problem.dispersion)?,
            PdeKind::Advection => {}
        }
        Ok(Self {
            problem: problem.clone(),
            grid: grid.clone(),
            points: grid.points(),
            linear,
            weno: WenoParams::default(),
        })
    }

    pub fn eval(&self, t: f64, u: &[f64]) -> Result<Vec<f64>> {
        let alpha = self.problem.max_wave_speed(u);
        let mut out = flux_divergence(u, |v| self.problem.flux(v), alpha, self.grid.dx(), &self.weno)?;
        for o in out.iter_mut() {
            *o = -*o;
        }
        for (offs, w) in &self.linear {
            for (o, d) in out.iter_mut().zip(apply_weights(offs, w, u)) {
                *o += d;
            }
        }
        if let Some(f) = &self.problem.forcing {
            for (o, v) in out.iter_mut().zip(f.eval(&self.points, t)) {
                *o += v;
            }
        }
        Ok(out)
    }

    /// Largest stable step for the current state: CFL for convection and
    /// diffusion plus a spectral-radius bound for higher-order linear terms.
    pub fn stable_dt(&self, u: &[f64], safety: f64) -> Result<f64> {
        let dx = self.grid.dx();
        let speed = self.problem.max_wave_speed(u);
        let diffusion = if self.problem.kind == PdeKind::ForcedBurgers { self.problem.viscosity } else { 0.0 };
        let mut dt = match cfl_dt(dx, diffusion, speed, safety) {
            Ok(v) => v,
            Err(_) => f64::INFINITY,
        };
        if self.problem.kind != PdeKind::ForcedBurgers {
            // RK3 stability covers |z| <= ~1.6 along the imaginary axis and
            // 2.5 along the negative real axis; use the smaller one.
            let rho: f64 = self.linear.iter().map(|(_, w)| w.iter().map(|v| v.abs()).sum::<f64>()).sum();
            if rho > 0.0 {
                dt = dt.min(safety * 1.5 / rho);
            }
        }
        if !dt.is_finite() {
            return invalid("time step unbounded: no dynamics in the problem");
        }
        Ok(dt)
    }
}

/// Linear symbol and pseudo-spectral nonlinearity for the spectral scheme.
#[derive(Debug, Clone)]
pub struct SpectralRhs {
    problem: PdeProblem,
    ops: SpectralOps,
    points: Vec<f64>,
    symbol: Vec<Complex64>,
}

impl SpectralRhs {
    pub fn new(problem: &PdeProblem, grid: &Grid) -> Result<Self> {
        problem.validate()?;
        let ops = SpectralOps::new(grid.n_points(), grid.length())?;
        let symbol = ops
            .k_even()
            .iter()
            .zip(ops.k_odd())
            .map(|(&ke, &ko)| match problem.kind {
                PdeKind::ForcedBurgers => Complex64::new(-problem.viscosity * ke * ke, 0.0),
                PdeKind::Ks => Complex64::new(ke * ke - ke.powi(4), 0.0),
                // -delta (ik)^3 = i delta k^3
                PdeKind::Kdv => Complex64::new(0.0, problem.dispersion * ko.powi(3)),
                PdeKind::Advection => Complex64::new(0.0, -problem.speed * ko),
            })
            .collect();
        Ok(Self { problem: problem.clone(), ops, points: grid.points(), symbol })
    }

    pub fn symbol(&self) -> &[Complex64] {
        &self.symbol
    }

    pub fn ops(&self) -> &SpectralOps {
        &self.ops
    }

    pub fn nonlinear(&self, v: &[Complex64], t: f64) -> Result<Vec<Complex64>> {
        let mut out = match self.problem.kind {
            PdeKind::Advection => vec![Complex64::new(0.0, 0.0); v.len()],
            _ => self.ops.conservative_square(v),
        };
        if let Some(f) = &self.problem.forcing {
            let fh = self.ops.fft(&f.eval(&self.points, t));
            for (o, g) in out.iter_mut().zip(fh) {
                *o += g;
            }
        }
        Ok(out)
    }

    /// Full right-hand side in physical space, `L u + N(u)`.
    pub fn eval(&self, t: f64, u: &[f64]) -> Result<Vec<f64>> {
        let v = self.ops.fft(u);
        let nl = self.nonlinear(&v, t)?;
        let total: Vec<Complex64> = v.iter().zip(&self.symbol).zip(&nl).map(|((a, s), n)| a * s + n).collect();
        Ok(self.ops.ifft(&total))
    }
}

fn check_blow_up(u: &[f64], t: f64, step: usize) -> Result<()> {
    if u.iter().any(|v| !v.is_finite() || v.abs() > BLOW_UP) {
        return Err(Error::BlowUp { time: t, step });
    }
    Ok(())
}

/// Integrates `problem` from `u0` and records rows at `t = 0, dt, 2dt, ...`
/// up to the first multiple of `dt` at or beyond `t_final`.
///
/// With `dt = None` the record step is chosen automatically: the CFL step of
/// `u0` for WENO (internal substeps then keep the CFL condition as the
/// solution evolves) and 0.05 for spectral KS.
pub fn simulate(
    problem: &PdeProblem,
    grid: &Grid,
    u0: &[f64],
    t_final: f64,
    scheme: Scheme,
    dt: Option<f64>,
) -> Result<Trajectory> {
    if u0.len() != grid.n_points() {
        return invalid(format!("initial field has {} points, grid {}", u0.len(), grid.n_points()));
    }
    if !(t_final > 0.0) {
        return invalid(format!("final time must be positive, got {t_final}"));
    }
    if let Some(d) = dt {
        if !(d > 0.0) {
            return invalid(format!("time step must be positive, got {d}"));
        }
    }
    check_blow_up(u0, 0.0, 0)?;
    match scheme {
        Scheme::WenoRk3 => {
            let rhs = FdRhs::new(problem, grid)?;
            let dt = match dt {
                Some(d) => d,
                None => rhs.stable_dt(u0, CFL_SAFETY)?,
            };
            let n_steps = steps_for(t_final, dt);
            let mut rows = Vec::with_capacity(n_steps + 1);
            rows.push(u0.to_vec());
            let mut u = u0.to_vec();
            for s in 0..n_steps {
                let t0 = s as f64 * dt;
                let sub = ((dt / rhs.stable_dt(&u, CFL_SAFETY)?) * (1.0 - 1e-12)).ceil().max(1.0) as usize;
                let h = dt / sub as f64;
                for j in 0..sub {
                    let t = t0 + j as f64 * h;
                    u = rk3_tvd_step(&u, t, h, |tt, x| rhs.eval(tt, x)).map_err(|e| match e {
                        Error::Numerical(_) => Error::BlowUp { time: t, step: s },
                        other => other,
                    })?;
                    check_blow_up(&u, t + h, s + 1)?;
                }
                rows.push(u.clone());
            }
            Trajectory::from_rows(*grid, dt, &rows)
        }
        Scheme::Spectral => {
            let rhs = SpectralRhs::new(problem, grid)?;
            let dt = match dt {
                Some(d) => d,
                None if problem.kind == PdeKind::Ks => KS_SPECTRAL_DT,
                None => CFL_SAFETY * grid.dx() / problem.max_wave_speed(u0).max(1e-12),
            };
            let stepper = Etdrk4::new(rhs.symbol(), dt)?;
            let n_steps = steps_for(t_final, dt);
            let mut rows = Vec::with_capacity(n_steps + 1);
            rows.push(u0.to_vec());
            let mut v = rhs.ops().fft(u0);
            for s in 0..n_steps {
                let t = s as f64 * dt;
                v = stepper.step(&v, t, |w, tt| rhs.nonlinear(w, tt)).map_err(|e| match e {
                    Error::Numerical(_) => Error::BlowUp { time: t, step: s },
                    other => other,
                })?;
                rhs.ops().symmetrize(&mut v);
                let u = rhs.ops().ifft(&v);
                check_blow_up(&u, t + dt, s + 1)?;
                rows.push(u);
            }
            Trajectory::from_rows(*grid, dt, &rows)
        }
    }
}

fn steps_for(t_final: f64, dt: f64) -> usize {
    ((t_final / dt) * (1.0 - 1e-12)).ceil().max(1.0) as usize
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn burgers_rhs_trivial_cases() {
        let z = vec![0.0; 32];
        assert!(weno_rhs_burgers(&z, 0.02, &z, 0.1).unwrap().iter().all(|v| *v == 0.0));
        let c = vec![1.7; 32];
        for v in weno_rhs_burgers(&c, 0.02, &z, 0.1).unwrap() {
            assert!(v.abs() < 1e-13);
        }
    }

    #[test]
    fn burgers_rhs_matches_spectral_convection() {
        let grid = Grid::new(2.0 * PI, 256).unwrap();
        let u: Vec<f64> = grid.points().iter().map(|x| x.sin()).collect();
        let z = vec![0.0; 256];
        let rhs = weno_rhs_burgers(&u, 0.0, &z, grid.dx()).unwrap();
        let ops = SpectralOps::new(256, 2.0 * PI).unwrap();
        let sq: Vec<f64> = u.iter().map(|v| v * v).collect();
        let exact = ops.derivative(&sq, 1);
        for (a, b) in rhs.iter().zip(&exact) {
            assert!((a + b).abs() < 1e-3, "{a} vs {}", -b);
        }
    }

    #[test]
    fn spectral_ks_mean_preserved() {
        let grid = Grid::new(64.0, 128).unwrap();
        let u0: Vec<f64> = grid.points().iter().map(|x| (2.0 * PI * x / 64.0).cos() + 0.1).collect();
        let traj = simulate(&PdeProblem::ks(), &grid, &u0, 2.0, Scheme::Spectral, None).unwrap();
        let m0: f64 = u0.iter().sum::<f64>() / 128.0;
        for r in 0..traj.n_steps() {
            let m: f64 = traj.row(r).iter().sum::<f64>() / 128.0;
            assert!((m - m0).abs() < 1e-10);
        }
    }

    #[test]
    fn burgers_energy_decays() {
        let grid = Grid::new(2.0 * PI, 128).unwrap();
        let u0: Vec<f64> = grid.points().iter().map(|x| (-(x - 3.0) * (x - 3.0)).exp()).collect();
        let traj = simulate(&PdeProblem::burgers(0.02, None), &grid, &u0, 2.0, Scheme::WenoRk3, Some(0.05)).unwrap();
        let mut prev = f64::INFINITY;
        for r in 0..traj.n_steps() {
            let e: f64 = traj.row(r).iter().map(|v| v * v).sum();
            assert!(e <= prev * (1.0 + 1e-12));
            prev = e;
        }
    }

    #[test]
    fn blow_up_is_reported() {
        let grid = Grid::new(2.0 * PI, 32).unwrap();
        let u0 = vec![2e6; 32];
        let err = simulate(&PdeProblem::advection(1.0), &grid, &u0, 1.0, Scheme::WenoRk3, None);
        assert!(matches!(err, Err(Error::BlowUp { step: 0, .. })));
    }

    #[test]
    fn length_mismatch() {
        let grid = Grid::new(1.0, 16).unwrap();
        assert!(simulate(&PdeProblem::advection(1.0), &grid, &[0.0; 8], 1.0, Scheme::WenoRk3, None).is_err());
    }
}
