//! Evaluation of trained models: rollouts, errors, spectra, Lyapunov
//! exponents, de-noising quality and cost accounting.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::grid::{Grid, Trajectory};
use crate::solvers::{Complex64, Etdrk4, PdeProblem, SpectralRhs, BLOW_UP};
use crate::stencilnet::{apply_operator, rollout_k, ForcingContext, StencilNetModel};

/// Autonomous rollout of `n_steps` model steps from `u0`. Row 0 is `u0`.
pub fn predict(
    model: &StencilNetModel,
    grid: &Grid,
    u0: &[f64],
    n_steps: usize,
    forcing: Option<&ForcingContext>,
) -> Result<Trajectory> {
    model.check_resolution(grid.dx())?;
    if u0.len() != grid.n_points() {
        return invalid(format!("u0 has {} points, grid has {}", u0.len(), grid.n_points()));
    }
    let dt = model.trained_dt;
    let mut data = Vec::with_capacity((n_steps + 1) * u0.len());
    data.extend_from_slice(u0);
    let mut cur = u0.to_vec();
    for s in 0..n_steps {
        let next = rollout_k(model, &cur, 1, s as f64 * dt, dt, forcing).map_err(|e| match e {
            Error::Numerical(_) => Error::BlowUp { time: (s + 1) as f64 * dt, step: s + 1 },
            other => other,
        })?;
        cur = next.into_iter().next().expect("one step");
        data.extend_from_slice(&cur);
    }
    Trajectory::new(*grid, dt, data)
}

fn check_same_shape(a: &Trajectory, b: &Trajectory) -> Result<()> {
    if a.n_steps() != b.n_steps() || a.n_points() != b.n_points() {
        return invalid(format!(
            "shape mismatch: {}x{} vs {}x{}",
            a.n_steps(),
            a.n_points(),
            b.n_steps(),
            b.n_points()
        ));
    }
    Ok(())
}

/// Mean over all space-time points of the squared error.
pub fn mse(pred: &Trajectory, truth: &Trajectory) -> Result<f64> {
    check_same_shape(pred, truth)?;
    let n = pred.data().len() as f64;
    Ok(pred.data().iter().zip(truth.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n)
}

/// Spatial MSE of every time row.
pub fn mse_per_step(pred: &Trajectory, truth: &Trajectory) -> Result<Vec<f64>> {
    check_same_shape(pred, truth)?;
    let nx = pred.n_points() as f64;
    Ok(pred
        .rows()
        .zip(truth.rows())
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / nx)
        .collect())
}

/// Time-averaged one-sided spatial power spectrum over rows
/// `start..end`, normalized by `N_x^2` so the powers sum to the mean of
/// `u^2`. Entry `k` is wavenumber `k` (`0..=N_x/2`).
pub fn power_spectrum(traj: &Trajectory, start: usize, end: usize) -> Result<Vec<f64>> {
    if start >= end || end > traj.n_steps() {
        return invalid(format!("spectrum window {start}..{end} outside 0..{}", traj.n_steps()));
    }
    let n = traj.n_points();
    let mut planner = rustfft::FftPlanner::new();
    let fft = planner.plan_fft_forward(n);
    let mut power = vec![0.0; n / 2 + 1];
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for row in start..end {
        for (b, &u) in buf.iter_mut().zip(traj.row(row)) {
            *b = Complex64::new(u, 0.0);
        }
        fft.process(&mut buf);
        for (k, p) in power.iter_mut().enumerate() {
            let mult = if k == 0 || 2 * k == n { 1.0 } else { 2.0 };
            *p += mult * buf[k].norm_sqr();
        }
    }
    let norm = ((end - start) * n * n) as f64;
    power.iter_mut().for_each(|p| *p /= norm);
    Ok(power)
}

/// Spectrum over the second half of the trajectory.
pub fn power_spectrum_default(traj: &Trajectory) -> Result<Vec<f64>> {
    power_spectrum(traj, traj.n_steps() / 2, traj.n_steps())
}

/// A time-stepper used for Lyapunov estimation.
pub trait Dynamics {
    fn dt(&self) -> f64;
    fn step(&mut self, u: &[f64]) -> Result<Vec<f64>>;
}

/// A learned model run autonomously.
pub struct ModelDynamics<'a> {
    pub model: &'a StencilNetModel,
    pub forcing: Option<&'a ForcingContext>,
    pub t: f64,
}

impl Dynamics for ModelDynamics<'_> {
    fn dt(&self) -> f64 {
        self.model.trained_dt
    }

    fn step(&mut self, u: &[f64]) -> Result<Vec<f64>> {
        let dt = self.model.trained_dt;
        let out = rollout_k(self.model, u, 1, self.t, dt, self.forcing)?;
        Ok(out.into_iter().next().expect("one step"))
    }
}

/// Reference pseudo-spectral ETDRK4 stepping, e.g. for KS ground truth.
pub struct SpectralDynamics {
    rhs: SpectralRhs,
    etd: Etdrk4,
    t: f64,
}

impl SpectralDynamics {
    pub fn new(problem: &PdeProblem, grid: &Grid, dt: f64) -> Result<Self> {
        let rhs = SpectralRhs::new(problem, grid)?;
        let etd = Etdrk4::new(rhs.symbol(), dt)?;
        Ok(Self { rhs, etd, t: 0.0 })
    }
}

impl Dynamics for SpectralDynamics {
    fn dt(&self) -> f64 {
        self.etd.dt()
    }

    fn step(&mut self, u: &[f64]) -> Result<Vec<f64>> {
        let v = self.rhs.ops().fft(u);
        let rhs = &self.rhs;
        let next = self.etd.step(&v, self.t, |w, t| rhs.nonlinear(w, t))?;
        self.t += self.etd.dt();
        Ok(self.rhs.ops().ifft(&next))
    }
}

/// Exact flow of `u' = rate * u`.
pub struct LinearDynamics {
    pub rate: f64,
    pub dt: f64,
}

impl Dynamics for LinearDynamics {
    fn dt(&self) -> f64 {
        self.dt
    }

    fn step(&mut self, u: &[f64]) -> Result<Vec<f64>> {
        let g = (self.rate * self.dt).exp();
        Ok(u.iter().map(|v| g * v).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovConfig {
    /// Perturbation size relative to `||u0||_2`.
    pub delta_rel: f64,
    pub n_steps: usize,
    pub n_directions: usize,
    /// Record `d(t)` every this many steps.
    pub sample_every: usize,
    /// Separation relative to `||u(t)||_2` at which growth is taken as saturated.
    pub saturation: f64,
    pub min_window: usize,
    pub min_r2: f64,
    pub seed: u64,
    /// Steps to integrate before perturbing (lets the state reach the attractor).
    pub spinup: usize,
    /// Steps between the base states of successive directions, so the
    /// average also runs over the attractor.
    pub base_stride: usize,
}

impl Default for LyapunovConfig {
    fn default() -> Self {
        Self {
            delta_rel: 1e-7,
            n_steps: 4000,
            n_directions: 10,
            sample_every: 5,
            saturation: 0.1,
            min_window: 20,
            min_r2: 0.98,
            seed: 0,
            spinup: 0,
            base_stride: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovReport {
    /// Slope of the mean `ln d(t)` over the fit window; `<= 0` when no
    /// growth window was found.
    pub lambda: f64,
    /// Fit window in sample indices, `None` when none qualified.
    pub window: Option<(usize, usize)>,
    pub r2: f64,
    /// Sample times.
    pub times: Vec<f64>,
    /// `ln d(t)` averaged over the perturbation directions.
    pub mean_log_distance: Vec<f64>,
    /// Slope per direction over the same window.
    pub per_direction: Vec<f64>,
}

fn norm2(u: &[f64]) -> f64 {
    u.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Least-squares line through `(x, y)`: `(slope, r^2)`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxx += (a - mx) * (a - mx);
        sxy += (a - mx) * (b - my);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 {
        return (0.0, 0.0);
    }
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    (slope, r2)
}

/// Longest contiguous segment of at least `min_len` samples with
/// `r^2 >= min_r2`, ties broken by `r^2`.
fn best_window(x: &[f64], y: &[f64], min_len: usize, min_r2: f64) -> Option<(usize, usize, f64, f64)> {
    let n = x.len();
    if n < min_len || min_len < 2 {
        return None;
    }
    // prefix sums for O(1) segment fits
    let mut s = vec![[0.0f64; 5]; n + 1];
    for i in 0..n {
        let (a, b) = (x[i], y[i]);
        let p = s[i];
        s[i + 1] = [p[0] + a, p[1] + b, p[2] + a * a, p[3] + a * b, p[4] + b * b];
    }
    let mut best: Option<(usize, usize, f64, f64)> = None;
    for len in (min_len..=n).rev() {
        for a in 0..=n - len {
            let b = a + len;
            let m = len as f64;
            let sx = s[b][0] - s[a][0];
            let sy = s[b][1] - s[a][1];
            let sxx = s[b][2] - s[a][2] - sx * sx / m;
            let sxy = s[b][3] - s[a][3] - sx * sy / m;
            let syy = s[b][4] - s[a][4] - sy * sy / m;
            if sxx <= 0.0 {
                continue;
            }
            let r2 = if syy <= 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
            if r2 >= min_r2 && best.is_none_or(|bb| r2 > bb.3) {
                best = Some((a, b, sxy / sxx, r2));
            }
        }
        if best.is_some() {
            break;
        }
    }
    best
}

/// Maximal Lyapunov exponent from the separation of `u0` and randomly
/// perturbed copies.
pub fn lyapunov_max(dynamics: &mut dyn Dynamics, u0: &[f64], cfg: &LyapunovConfig) -> Result<LyapunovReport> {
    if cfg.n_directions == 0 || cfg.sample_every == 0 || cfg.n_steps < cfg.sample_every {
        return invalid("lyapunov needs at least one direction and one sample");
    }
    if !(cfg.delta_rel > 0.0) {
        return invalid("perturbation size must be positive");
    }
    let mut state = u0.to_vec();
    for _ in 0..cfg.spinup {
        state = dynamics.step(&state)?;
    }
    let n = state.len();
    let delta0 = cfg.delta_rel * norm2(&state);
    if !(delta0 > 0.0) {
        return invalid("u0 has zero norm");
    }
    // reference trajectory covering every direction's window
    let total = (cfg.n_directions - 1) * cfg.base_stride + cfg.n_steps;
    let mut reference = Vec::with_capacity(total + 1);
    reference.push(state);
    for s in 0..total {
        let next = dynamics.step(&reference[s])?;
        reference.push(next);
    }
    let n_samples = cfg.n_steps / cfg.sample_every + 1;
    let times: Vec<f64> = (0..n_samples).map(|j| (j * cfg.sample_every) as f64 * dynamics.dt()).collect();
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let mut logs = vec![vec![0.0; n_samples]; cfg.n_directions];
    let mut saturated_at = n_samples;
    for (dir_idx, log_d) in logs.iter_mut().enumerate() {
        let off = dir_idx * cfg.base_stride;
        let base = &reference[off];
        let dir: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let dn = norm2(&dir);
        let mut p: Vec<f64> = base.iter().zip(&dir).map(|(b, d)| b + delta0 * d / dn).collect();
        log_d[0] = delta0.ln();
        for s in 1..=cfg.n_steps {
            p = dynamics.step(&p)?;
            if p.iter().any(|v| !v.is_finite() || v.abs() > BLOW_UP) {
                return Err(Error::BlowUp { time: s as f64 * dynamics.dt(), step: s });
            }
            if s % cfg.sample_every == 0 {
                let j = s / cfg.sample_every;
                let r = &reference[off + s];
                let d: f64 = p.iter().zip(r).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                log_d[j] = d.max(f64::MIN_POSITIVE).ln();
                if d > cfg.saturation * norm2(r) && j < saturated_at {
                    saturated_at = j;
                }
            }
        }
    }
    let mean: Vec<f64> = (0..n_samples)
        .map(|j| logs.iter().map(|l| l[j]).sum::<f64>() / cfg.n_directions as f64)
        .collect();
    let usable = saturated_at.max(2).min(n_samples);
    let found = best_window(&times[..usable], &mean[..usable], cfg.min_window, cfg.min_r2);
    let report = match found {
        Some((a, b, slope, r2)) => {
            let per_direction = logs.iter().map(|l| linear_fit(&times[a..b], &l[a..b]).0).collect();
            LyapunovReport {
                lambda: slope,
                window: Some((a, b)),
                r2,
                times,
                mean_log_distance: mean,
                per_direction,
            }
        }
        None => {
            let (slope, r2) = linear_fit(&times[..usable], &mean[..usable]);
            LyapunovReport {
                lambda: slope.min(0.0),
                window: None,
                r2,
                times,
                mean_log_distance: mean,
                per_direction: Vec::new(),
            }
        }
    };
    Ok(report)
}

/// Reduction in space-time elements from coarsening by `c` in `d`
/// dimensions: `c^(d+2)` when diffusion limits the time step, else `c^(d+1)`.
pub fn dof_reduction(c: u64, d: u32, has_diffusion: bool) -> Result<u64> {
    if c == 0 {
        return invalid("coarsening factor must be >= 1");
    }
    if !(1..=3).contains(&d) {
        return invalid(format!("dimension must be 1, 2 or 3, got {d}"));
    }
    let e = if has_diffusion { d + 2 } else { d + 1 };
    c.checked_pow(e).ok_or_else(|| Error::InvalidArgument("dof reduction overflows u64".into()))
}

/// Predicted speed-up `kappa = dof_reduction / overhead` with
/// `overhead = t_n / t_s` (network cost over solver cost per point).
pub fn kappa(c: u64, d: u32, has_diffusion: bool, overhead: f64) -> Result<f64> {
    if !(overhead > 0.0) {
        return invalid("overhead ratio must be positive");
    }
    Ok(dof_reduction(c, d, has_diffusion)? as f64 / overhead)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedupSummary {
    /// `t_n / t_s`.
    pub overhead: f64,
    pub kappa: Vec<(u64, f64)>,
}

pub fn speedup_from_costs(t_s: f64, t_n: f64, factors: &[u64], d: u32, has_diffusion: bool) -> Result<SpeedupSummary> {
    if !(t_s > 0.0) || !(t_n > 0.0) {
        return invalid("costs must be positive");
    }
    let overhead = t_n / t_s;
    let kappa = factors
        .iter()
        .map(|&c| Ok((c, kappa(c, d, has_diffusion, overhead)?)))
        .collect::<Result<_>>()?;
    Ok(SpeedupSummary { overhead, kappa })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub n_points: usize,
    /// Median seconds per grid point of one solver rhs evaluation.
    pub t_s: f64,
    /// Median seconds per grid point of one operator evaluation.
    pub t_n: f64,
    pub ratio: f64,
    pub kappa: Vec<(u64, f64)>,
    /// Spread of either timing exceeded 20% of its median.
    pub unreliable: bool,
}

pub const BENCH_CSV_HEADER: &str = "n_points,t_s,t_n,ratio,c,kappa,unreliable";

pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut s = String::from(BENCH_CSV_HEADER);
    s.push('\n');
    for r in rows {
        for (c, k) in &r.kappa {
            s.push_str(&format!("{},{:e},{:e},{},{},{},{}\n", r.n_points, r.t_s, r.t_n, r.ratio, c, k, r.unreliable));
        }
    }
    s
}

pub type FieldFn<'a> = dyn Fn(&[f64], f64) -> Result<Vec<f64>> + Sync + 'a;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub sizes: Vec<usize>,
    pub repetitions: usize,
    pub warmup: usize,
    pub factors: Vec<u64>,
    pub dimension: u32,
    pub has_diffusion: bool,
    pub length: f64,
}

/// `(median, spread)` where spread is the interquartile range.
fn median_spread(mut xs: Vec<f64>) -> (f64, f64) {
    xs.sort_by(f64::total_cmp);
    let q = |p: f64| xs[((xs.len() - 1) as f64 * p).round() as usize];
    (q(0.5), q(0.75) - q(0.25))
}

/// Times `baseline(u, dx)` against `operator(u, dx)` on a single worker.
pub fn speedup_bench(baseline: &FieldFn<'_>, operator: &FieldFn<'_>, cfg: &BenchConfig) -> Result<Vec<BenchRow>> {
    if cfg.repetitions < 10 {
        return invalid("benchmark needs at least 10 repetitions");
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| Error::Internal(format!("thread pool: {e}")))?;
    pool.install(|| {
        cfg.sizes
            .iter()
            .map(|&n| {
                let grid = Grid::new(cfg.length, n)?;
                let dx = grid.dx();
                let u: Vec<f64> = grid
                    .points()
                    .iter()
                    .map(|x| (2.0 * std::f64::consts::PI * x / cfg.length).sin() + 0.5)
                    .collect();
                let time = |f: &FieldFn<'_>| -> Result<(f64, f64)> {
                    for _ in 0..cfg.warmup {
                        std::hint::black_box(f(&u, dx)?);
                    }
                    let mut ts = Vec::with_capacity(cfg.repetitions);
                    for _ in 0..cfg.repetitions {
                        let t0 = Instant::now();
                        std::hint::black_box(f(std::hint::black_box(&u), dx)?);
                        ts.push(t0.elapsed().as_secs_f64() / n as f64);
                    }
                    Ok(median_spread(ts))
                };
                let (t_s, sp_s) = time(baseline)?;
                let (t_n, sp_n) = time(operator)?;
                let (t_s, t_n) = (t_s.max(1e-15), t_n.max(1e-15));
                let summary = speedup_from_costs(t_s, t_n, &cfg.factors, cfg.dimension, cfg.has_diffusion)?;
                Ok(BenchRow {
                    n_points: n,
                    t_s,
                    t_n,
                    ratio: summary.overhead,
                    kappa: summary.kappa,
                    unreliable: sp_s > 0.2 * t_s || sp_n > 0.2 * t_n,
                })
            })
            .collect()
    })
}

/// Operator evaluation of a model for benchmarking; ignores `dx`.
pub fn model_operator(model: &StencilNetModel) -> impl Fn(&[f64], f64) -> Result<Vec<f64>> + Sync + '_ {
    move |u, _dx| apply_operator(model, u)
}

pub const HISTOGRAM_BINS: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoiseReport {
    pub correlation: f64,
    pub std_ratio: f64,
    /// Two-sample Kolmogorov-Smirnov statistic.
    pub ks_statistic: f64,
    pub hist_range: (f64, f64),
    pub hist_estimate: Vec<usize>,
    pub hist_truth: Vec<usize>,
}

fn mean_std(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    (m, (x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n).sqrt())
}

/// Pearson correlation, 0 when either side is constant.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let (ma, sa) = mean_std(a);
    let (mb, sb) = mean_std(b);
    if sa == 0.0 || sb == 0.0 {
        return 0.0;
    }
    let cov = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / a.len() as f64;
    cov / (sa * sb)
}

pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

fn histogram(x: &[f64], lo: f64, hi: f64) -> Vec<usize> {
    let mut h = vec![0; HISTOGRAM_BINS];
    let w = (hi - lo) / HISTOGRAM_BINS as f64;
    for &v in x {
        let b = if w > 0.0 { ((v - lo) / w) as usize } else { 0 };
        h[b.min(HISTOGRAM_BINS - 1)] += 1;
    }
    h
}

pub fn denoise_report(estimate: &[f64], truth: &[f64]) -> Result<DenoiseReport> {
    if estimate.len() != truth.len() || truth.is_empty() {
        return invalid("estimate and truth must have the same non-zero length");
    }
    let (_, se) = mean_std(estimate);
    let (_, st) = mean_std(truth);
    let lo = estimate.iter().chain(truth).copied().fold(f64::INFINITY, f64::min);
    let hi = estimate.iter().chain(truth).copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(DenoiseReport {
        correlation: pearson(estimate, truth),
        std_ratio: if st == 0.0 { 0.0 } else { se / st },
        ks_statistic: ks_two_sample(estimate, truth),
        hist_range: (lo, hi),
        hist_estimate: histogram(estimate, lo, hi),
        hist_truth: histogram(truth, lo, hi),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovSummary {
    pub slope: f64,
    pub window: Option<(f64, f64)>,
    pub r2: f64,
}

impl From<&LyapunovReport> for LyapunovSummary {
    fn from(r: &LyapunovReport) -> Self {
        Self { slope: r.lambda, window: r.window.map(|(a, b)| (r.times[a], r.times[b - 1])), r2: r.r2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mse: f64,
    pub mse_per_step: Vec<f64>,
    /// `(wavenumber, power)` pairs.
    pub spectrum: Vec<(usize, f64)>,
    pub lyapunov: Option<LyapunovSummary>,
    pub speedup: Option<SpeedupSummary>,
}

impl EvalReport {
    pub fn new(pred: &Trajectory, truth: &Trajectory) -> Result<Self> {
        let spectrum = power_spectrum_default(pred)?.into_iter().enumerate().collect();
        Ok(Self {
            mse: mse(pred, truth)?,
            mse_per_step: mse_per_step(pred, truth)?,
            spectrum,
            lyapunov: None,
            speedup: None,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn mse_csv(&self, dt: f64) -> String {
        let mut s = String::from("step,time,mse\n");
        for (n, e) in self.mse_per_step.iter().enumerate() {
            s.push_str(&format!("{n},{},{e:e}\n", n as f64 * dt));
        }
        s
    }

    pub fn spectrum_csv(&self) -> String {
        let mut s = String::from("k,power\n");
        for (k, p) in &self.spectrum {
            s.push_str(&format!("{k},{p:e}\n"));
        }
        s
    }
}

pub fn lyapunov_csv(r: &LyapunovReport) -> String {
    let mut s = String::from("time,mean_log_distance\n");
    for (t, l) in r.times.iter().zip(&r.mean_log_distance) {
        s.push_str(&format!("{t},{l}\n"));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::Mlp;
    use crate::stencilnet::planted_diffusion_model;

    fn traj(rows: &[Vec<f64>]) -> Trajectory {
        Trajectory::from_rows(Grid::new(1.0, rows[0].len()).unwrap(), 0.1, rows).unwrap()
    }

    #[test]
    fn mse_basics() {
        let a = traj(&[vec![1.0, 2.0], vec![3.0, 4.0]]);
        let b = traj(&[vec![1.5, 2.5], vec![3.5, 4.5]]);
        assert_eq!(mse(&a, &a).unwrap(), 0.0);
        assert_eq!(mse(&a, &b).unwrap(), 0.25);
        assert_eq!(mse(&b, &a).unwrap(), mse(&a, &b).unwrap());
    }

    #[test]
    fn spectrum_of_sine_and_constant() {
        let n = 32;
        let sine: Vec<f64> = (0..n).map(|i| (2.0 * std::f64::consts::PI * 3.0 * i as f64 / n as f64).sin()).collect();
        let p = power_spectrum(&traj(&[sine]), 0, 1).unwrap();
        assert!((p[3] - 0.5).abs() < 1e-12);
        assert!(p.iter().enumerate().filter(|(k, _)| *k != 3).all(|(_, v)| *v < 1e-20));
        let p = power_spectrum(&traj(&[vec![2.0; n]]), 0, 1).unwrap();
        assert!((p[0] - 4.0).abs() < 1e-12);
        assert!(p[1..].iter().all(|v| *v < 1e-20));
    }

    #[test]
    fn zero_model_predicts_constant() {
        let grid = Grid::new(1.0, 8).unwrap();
        let m = StencilNetModel::new(Mlp::zeros(&[3, 2, 1]).unwrap(), 1, grid.dx(), 0.1).unwrap();
        let u0: Vec<f64> = (0..8).map(|i| i as f64).collect();
        let t = predict(&m, &grid, &u0, 5, None).unwrap();
        assert_eq!(t.n_steps(), 6);
        assert!(t.rows().all(|r| r == u0.as_slice()));
    }

    #[test]
    fn predict_rejects_other_resolution() {
        let m = StencilNetModel::new(Mlp::zeros(&[3, 1]).unwrap(), 1, 0.5, 0.1).unwrap();
        let grid = Grid::new(1.0, 8).unwrap();
        assert!(matches!(predict(&m, &grid, &[0.0; 8], 1, None), Err(Error::ResolutionMismatch { .. })));
    }

    #[test]
    fn dof_examples() {
        assert_eq!(dof_reduction(8, 3, true).unwrap(), 32768);
        assert_eq!(dof_reduction(1, 2, true).unwrap(), 1);
        assert_eq!(dof_reduction(4, 1, true).unwrap(), 64);
        assert_eq!(dof_reduction(4, 1, false).unwrap(), 16);
        assert!(dof_reduction(0, 1, true).is_err());
        assert!(dof_reduction(2, 4, true).is_err());
    }

    #[test]
    fn equal_costs_give_dof_reduction() {
        let s = speedup_from_costs(2e-9, 2e-9, &[2, 4, 8], 1, true).unwrap();
        assert_eq!(s.overhead, 1.0);
        assert_eq!(s.kappa, vec![(2, 8.0), (4, 64.0), (8, 512.0)]);
    }

    #[test]
    fn denoise_identity_and_zero() {
        let t: Vec<f64> = (0..100).map(|i| ((i * 37) % 17) as f64 - 8.0).collect();
        let r = denoise_report(&t, &t).unwrap();
        assert!((r.correlation - 1.0).abs() < 1e-12);
        assert!((r.std_ratio - 1.0).abs() < 1e-12);
        assert_eq!(r.ks_statistic, 0.0);
        assert_eq!(r.hist_estimate, r.hist_truth);
        let r = denoise_report(&vec![0.0; 100], &t).unwrap();
        assert_eq!(r.correlation, 0.0);
        assert_eq!(r.std_ratio, 0.0);
    }

    #[test]
    fn ks_statistic_disjoint() {
        assert_eq!(ks_two_sample(&[0.0, 1.0], &[2.0, 3.0]), 1.0);
        assert!((ks_two_sample(&[0.0, 2.0], &[1.0, 3.0]) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn window_fit_recovers_line() {
        let x: Vec<f64> = (0..50).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| if *v < 30.0 { 0.5 * v } else { 15.0 }).collect();
        let (a, b, slope, _) = best_window(&x, &y, 10, 0.999).unwrap();
        assert_eq!(a, 0);
        assert!(b <= 32);
        assert!((slope - 0.5).abs() < 0.05);
    }

    #[test]
    fn lyapunov_contraction_is_negative() {
        let grid = Grid::new(1.0, 16).unwrap();
        let m = planted_diffusion_model(0.01, grid.dx(), 1e-3).unwrap();
        let u0: Vec<f64> = grid.points().iter().map(|x| (2.0 * std::f64::consts::PI * x).sin() + 1.0).collect();
        let mut dynamics = ModelDynamics { model: &m, forcing: None, t: 0.0 };
        let cfg = LyapunovConfig { n_steps: 400, n_directions: 3, ..Default::default() };
        let r = lyapunov_max(&mut dynamics, &u0, &cfg).unwrap();
        assert!(r.lambda < 0.0, "{}", r.lambda);
    }
}
