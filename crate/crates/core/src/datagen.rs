//! Benchmark datasets: forced Burgers, Kuramoto-Sivashinsky and
//! Korteweg-de Vries, with random forcing, initial conditions, additive
//! noise and coarse sub-sampling.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::grid::{dropped_time_rows, subsample, Grid, Trajectory};
use crate::solvers::{simulate, FdRhs, PdeKind, PdeProblem, Scheme, CFL_SAFETY};

/// Sum of travelling sinusoids `sum_i A_i sin(w_i t + 2 pi l_i x / L + phi_i)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForcingParams {
    pub amplitudes: Vec<f64>,
    pub frequencies: Vec<f64>,
    pub wavenumbers: Vec<i64>,
    pub phases: Vec<f64>,
    pub length: f64,
}

impl ForcingParams {
    pub fn n_modes(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn eval(&self, x: &[f64], t: f64) -> Vec<f64> {
        eval_forcing(self, x, t)
    }
}

pub const FORCING_AMPLITUDE: f64 = 0.1;
pub const FORCING_FREQUENCY: f64 = 0.4;
pub const FORCING_MODES: usize = 20;

/// Forcing wavenumbers for a domain of length `length`: `{2..5}` on `2 pi`
/// and `{2s..10s}` on `2 pi s` for `s > 1` (so `{8..40}` on `8 pi`).
pub fn forcing_wavenumbers(length: f64) -> Vec<i64> {
    let s = (length / (2.0 * PI)).round().max(1.0) as i64;
    if s == 1 {
        (2..=5).collect()
    } else {
        (2 * s..=10 * s).collect()
    }
}

/// Number of forcing modes: 20 on the base domain, one per admissible
/// wavenumber on larger domains.
pub fn forcing_mode_count(length: f64, wavenumbers: &[i64]) -> usize {
    if length <= 2.0 * PI * (1.0 + 1e-9) {
        FORCING_MODES
    } else {
        wavenumbers.len()
    }
}

pub fn sample_forcing(seed: u64, length: f64, wavenumbers: &[i64]) -> Result<ForcingParams> {
    sample_forcing_modes(seed, length, wavenumbers, forcing_mode_count(length, wavenumbers))
}

pub fn sample_forcing_modes(seed: u64, length: f64, wavenumbers: &[i64], n_modes: usize) -> Result<ForcingParams> {
    if wavenumbers.is_empty() {
        return invalid("forcing wavenumber set is empty");
    }
    if !(length > 0.0) {
        return invalid("domain length must be positive");
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut fp = ForcingParams {
        amplitudes: Vec::with_capacity(n_modes),
        frequencies: Vec::with_capacity(n_modes),
        wavenumbers: Vec::with_capacity(n_modes),
        phases: Vec::with_capacity(n_modes),
        length,
    };
    for _ in 0..n_modes {
        fp.amplitudes.push(rng.random_range(-FORCING_AMPLITUDE..=FORCING_AMPLITUDE));
        fp.frequencies.push(rng.random_range(-FORCING_FREQUENCY..=FORCING_FREQUENCY));
        fp.phases.push(rng.random_range(0.0..=2.0 * PI));
        fp.wavenumbers.push(wavenumbers[rng.random_range(0..wavenumbers.len())]);
    }
    Ok(fp)
}

pub fn eval_forcing(fp: &ForcingParams, x: &[f64], t: f64) -> Vec<f64> {
    let k = 2.0 * PI / fp.length;
    x.iter()
        .map(|&xi| {
            let mut s = 0.0;
            for m in 0..fp.amplitudes.len() {
                s += fp.amplitudes[m]
                    * (fp.frequencies[m] * t + k * fp.wavenumbers[m] as f64 * xi + fp.phases[m]).sin();
            }
            s
        })
        .collect()
}

pub fn burgers_ic(grid: &Grid) -> Vec<f64> {
    grid.points().iter().map(|x| (-(x - 3.0) * (x - 3.0)).exp()).collect()
}

/// `sum_{l=1..3} A_l sin(2 pi l x / L + phi_l)`, `A_l` in `[-0.5, 0.5]`.
pub fn ks_ic(seed: u64, grid: &Grid) -> Vec<f64> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let modes: Vec<(f64, f64)> = (1..=3)
        .map(|_| (rng.random_range(-0.5..=0.5), rng.random_range(0.0..=2.0 * PI)))
        .collect();
    let k = 2.0 * PI / grid.length();
    grid.points()
        .iter()
        .map(|&x| {
            modes
                .iter()
                .enumerate()
                .map(|(j, (a, phi))| a * (k * (j + 1) as f64 * x + phi).sin())
                .sum()
        })
        .collect()
}

pub fn kdv_ic(grid: &Grid) -> Vec<f64> {
    grid.points().iter().map(|x| (PI * x).cos()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub sigma: f64,
    pub seed: u64,
}

/// Population standard deviation over every entry.
pub fn global_std(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt()
}

/// `V = U + eta`, `eta ~ sigma * N(0, std(U)^2)` i.i.d. Returns the noisy
/// trajectory and the realized noise `V - U` in the same layout.
pub fn add_noise(traj: &Trajectory, spec: &NoiseSpec) -> Result<(Trajectory, Vec<f64>)> {
    if !(spec.sigma >= 0.0) || !spec.sigma.is_finite() {
        return invalid(format!("noise magnitude must be >= 0, got {}", spec.sigma));
    }
    if spec.sigma == 0.0 {
        return Ok((traj.clone(), vec![0.0; traj.data().len()]));
    }
    let scale = spec.sigma * global_std(traj.data());
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    let noisy: Vec<f64> = traj
        .data()
        .iter()
        .map(|u| {
            let z: f64 = rng.sample(StandardNormal);
            u + scale * z
        })
        .collect();
    let noise = noisy.iter().zip(traj.data()).map(|(v, u)| v - u).collect();
    Ok((Trajectory::new(*traj.grid(), traj.dt(), noisy)?, noise))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Recipe {
    Burgers,
    Ks,
    Kdv,
}

impl std::str::FromStr for Recipe {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "burgers" => Ok(Recipe::Burgers),
            "ks" => Ok(Recipe::Ks),
            "kdv" => Ok(Recipe::Kdv),
            other => invalid(format!("unknown recipe '{other}' (burgers, ks, kdv)")),
        }
    }
}

/// Everything needed to regenerate a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RecipeConfig {
    pub recipe: Recipe,
    pub length: f64,
    pub origin: f64,
    pub n_points: usize,
    pub viscosity: f64,
    pub dispersion: f64,
    /// Simulated horizon; at least `t_train`.
    pub t_total: f64,
    /// Training window `[0, t_train]`.
    pub t_train: f64,
    /// Row spacing of the fine trajectory.
    pub fine_dt: f64,
    pub scheme: Scheme,
    pub coarse_factors: Vec<usize>,
    /// Training step; `None` picks the largest aligned stable multiple of `fine_dt`.
    pub coarse_dt: Option<f64>,
    pub sigma: f64,
    /// Forcing wavenumber set; `None` derives it from `length`.
    pub wavenumbers: Option<Vec<i64>>,
}

impl Default for RecipeConfig {
    fn default() -> Self {
        Self::burgers()
    }
}

impl RecipeConfig {
    pub fn preset(recipe: Recipe) -> Self {
        match recipe {
            Recipe::Burgers => Self::burgers(),
            Recipe::Ks => Self::ks(),
            Recipe::Kdv => Self::kdv(),
        }
    }

    pub fn burgers() -> Self {
        Self {
            recipe: Recipe::Burgers,
            length: 2.0 * PI,
            origin: 0.0,
            n_points: 256,
            viscosity: 0.02,
            dispersion: 0.0,
            t_total: 40.0,
            t_train: 40.0,
            fine_dt: 0.01,
            scheme: Scheme::WenoRk3,
            coarse_factors: vec![2, 4, 8],
            coarse_dt: None,
            sigma: 0.0,
            wavenumbers: None,
        }
    }

    pub fn ks() -> Self {
        Self {
            recipe: Recipe::Ks,
            length: 64.0,
            origin: -32.0,
            n_points: 256,
            viscosity: 0.0,
            dispersion: 0.0,
            t_total: 50.0,
            t_train: 50.0,
            fine_dt: 0.05,
            scheme: Scheme::Spectral,
            coarse_factors: vec![4],
            coarse_dt: Some(0.05),
            sigma: 0.0,
            wavenumbers: None,
        }
    }

    pub fn kdv() -> Self {
        Self {
            recipe: Recipe::Kdv,
            length: 2.0,
            origin: -1.0,
            n_points: 256,
            viscosity: 0.0,
            dispersion: 0.0025,
            t_total: 1.0,
            t_train: 1.0,
            fine_dt: 5e-4,
            scheme: Scheme::Spectral,
            coarse_factors: vec![8],
            coarse_dt: Some(0.02),
            sigma: 0.3,
            wavenumbers: None,
        }
    }

    pub fn grid(&self) -> Result<Grid> {
        Grid::with_origin(self.length, self.n_points, self.origin)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.length > 0.0) || self.n_points < 3 {
            return invalid("grid needs a positive length and at least 3 points");
        }
        if !(self.viscosity >= 0.0) {
            return invalid(format!("viscosity must be >= 0, got {}", self.viscosity));
        }
        if !(self.fine_dt > 0.0) || !(self.t_train > 0.0) || self.t_total < self.t_train {
            return invalid("need fine_dt > 0 and 0 < t_train <= t_total");
        }
        if self.coarse_factors.is_empty() || self.coarse_factors.iter().any(|&c| c == 0 || self.n_points % c != 0) {
            return invalid(format!(
                "coarse factors {:?} must be positive divisors of {}",
                self.coarse_factors, self.n_points
            ));
        }
        if !(self.sigma >= 0.0) {
            return invalid("noise magnitude must be >= 0");
        }
        if let Some(d) = self.coarse_dt {
            let ratio = d / self.fine_dt;
            if !(d > 0.0) || (ratio - ratio.round()).abs() > 1e-9 || ratio.round() < 1.0 {
                return invalid(format!("coarse dt {d} must be a positive multiple of fine dt {}", self.fine_dt));
            }
        }
        Ok(())
    }

    /// The PDE, with forcing sampled from `seed` for Burgers.
    pub fn problem(&self, seed: u64) -> Result<PdeProblem> {
        Ok(match self.recipe {
            Recipe::Burgers => {
                let wn = self.wavenumbers.clone().unwrap_or_else(|| forcing_wavenumbers(self.length));
                PdeProblem::burgers(self.viscosity, Some(sample_forcing(seed, self.length, &wn)?))
            }
            Recipe::Ks => PdeProblem::ks(),
            Recipe::Kdv => PdeProblem::kdv(self.dispersion),
        })
    }

    pub fn initial_condition(&self, grid: &Grid, seed: u64) -> Vec<f64> {
        match self.recipe {
            Recipe::Burgers => burgers_ic(grid),
            Recipe::Ks => ks_ic(seed, grid),
            Recipe::Kdv => kdv_ic(grid),
        }
    }
}

/// Seeds derived from the root seed for each random ingredient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSeeds {
    pub root: u64,
    pub forcing: u64,
    pub initial_condition: u64,
    pub noise: u64,
}

impl DatasetSeeds {
    pub fn from_root(root: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(root);
        Self { root, forcing: rng.random(), initial_condition: rng.random(), noise: rng.random() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoarseMeta {
    pub c_space: usize,
    pub c_time: usize,
    pub dx: f64,
    pub dt: f64,
    pub n_points: usize,
    pub n_steps: usize,
    pub dropped_rows: usize,
    /// `dt * max|f'(u)| / dx` on the coarse grid.
    pub cfl_advective: f64,
    /// `dt * D / dx^2` on the coarse grid (zero without diffusion).
    pub cfl_diffusive: f64,
}

/// Sidecar metadata written next to the trajectory files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub config: RecipeConfig,
    pub problem: PdeProblem,
    pub seeds: DatasetSeeds,
    pub fine_dx: f64,
    pub fine_steps: usize,
    pub crop_window: (f64, f64),
    pub coarse: Vec<CoarseMeta>,
    pub noise: Option<NoiseSpec>,
    pub n_forcing_modes: usize,
}

#[derive(Debug, Clone)]
pub struct CoarseSet {
    pub meta: CoarseMeta,
    /// Clean coarse training data.
    pub clean: Trajectory,
    /// Noisy data and the realized noise, when `sigma > 0`.
    pub noisy: Option<(Trajectory, Vec<f64>)>,
}

impl CoarseSet {
    /// The trajectory a learner should see.
    pub fn observed(&self) -> &Trajectory {
        self.noisy.as_ref().map(|(t, _)| t).unwrap_or(&self.clean)
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub meta: DatasetMeta,
    /// Fine trajectory over `[0, t_total]`.
    pub fine: Trajectory,
    pub coarse: Vec<CoarseSet>,
}

impl Dataset {
    pub fn coarse_for(&self, c_space: usize) -> Option<&CoarseSet> {
        self.coarse.iter().find(|c| c.meta.c_space == c_space)
    }
}

/// Time sub-sampling factor for a coarse grid: the configured `coarse_dt`,
/// or the largest multiple of `fine_dt` inside the coarse stability bound.
pub fn coarse_time_factor(cfg: &RecipeConfig, problem: &PdeProblem, coarse: &Grid, u_max: f64) -> Result<usize> {
    if let Some(d) = cfg.coarse_dt {
        return Ok((d / cfg.fine_dt).round() as usize);
    }
    let rhs = FdRhs::new(problem, coarse)?;
    let bound = rhs.stable_dt(&[u_max], CFL_SAFETY)?;
    let c = ((bound / cfg.fine_dt) * (1.0 + 1e-12)).floor() as usize;
    if c == 0 {
        return invalid(format!(
            "fine dt {} exceeds the coarse stability bound {bound}",
            cfg.fine_dt
        ));
    }
    Ok(c)
}

/// Simulates the recipe, crops to the training window and builds every
/// coarse variant (with noise when `sigma > 0`).
pub fn make_dataset(cfg: &RecipeConfig, seed: u64) -> Result<Dataset> {
    cfg.validate()?;
    let seeds = DatasetSeeds::from_root(seed);
    let grid = cfg.grid()?;
    let problem = cfg.problem(seeds.forcing)?;
    let u0 = cfg.initial_condition(&grid, seeds.initial_condition);
    let fine = simulate(&problem, &grid, &u0, cfg.t_total, cfg.scheme, Some(cfg.fine_dt))?;
    let train = fine.crop_time(cfg.t_train)?;
    let u_max = train.max_abs();
    let mut coarse = vec![];
    for &c in &cfg.coarse_factors {
        let cgrid = grid.coarsen(c)?;
        let c_time = coarse_time_factor(cfg, &problem, &cgrid, u_max)?;
        let clean = subsample(&train, c, c_time)?;
        let dt = clean.dt();
        let speed = problem.max_wave_speed(&[u_max]);
        let diffusion = if problem.kind == PdeKind::ForcedBurgers { problem.viscosity } else { 0.0 };
        let meta = CoarseMeta {
            c_space: c,
            c_time,
            dx: cgrid.dx(),
            dt,
            n_points: cgrid.n_points(),
            n_steps: clean.n_steps(),
            dropped_rows: dropped_time_rows(train.n_steps(), c_time),
            cfl_advective: dt * speed / cgrid.dx(),
            cfl_diffusive: dt * diffusion / (cgrid.dx() * cgrid.dx()),
        };
        let noisy = if cfg.sigma > 0.0 {
            Some(add_noise(&clean, &NoiseSpec { sigma: cfg.sigma, seed: seeds.noise ^ c as u64 })?)
        } else {
            None
        };
        coarse.push(CoarseSet { meta, clean, noisy });
    }
    let meta = DatasetMeta {
        config: cfg.clone(),
        n_forcing_modes: problem.forcing.as_ref().map_or(0, |f| f.n_modes()),
        problem,
        seeds,
        fine_dx: grid.dx(),
        fine_steps: fine.n_steps(),
        crop_window: (0.0, train.t_final()),
        coarse: coarse.iter().map(|c| c.meta.clone()).collect(),
        noise: (cfg.sigma > 0.0).then_some(NoiseSpec { sigma: cfg.sigma, seed: seeds.noise }),
    };
    Ok(Dataset { meta, fine, coarse })
}
