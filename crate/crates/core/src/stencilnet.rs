//! The learned operator: a shared MLP slid over every stencil of a periodic
//! field, integrated with TVD-RK3 and fitted by back-propagating a
//! multi-step forward/backward time-stepping loss.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::ForcingParams;
use crate::error::{invalid, Error, Result};
use crate::format::{self, Checkpoint};
use crate::grid::{wrap, Grid, Trajectory};
use crate::neural::{grad, AdamState, Mlp, NodeId, Tape};
use crate::solvers::rk3_tvd_step_signed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Integrator {
    #[default]
    Rk3Tvd,
}

/// A trained (or initialized) discrete operator for one grid resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct StencilNetModel {
    pub mlp: Mlp,
    pub radius: usize,
    pub trained_dx: f64,
    pub trained_dt: f64,
    pub integrator: Integrator,
    pub problem: Option<String>,
}

/// Relative tolerance when comparing grid spacings.
const DX_TOLERANCE: f64 = 1e-9;

impl StencilNetModel {
    pub fn new(mlp: Mlp, radius: usize, trained_dx: f64, trained_dt: f64) -> Result<Self> {
        if mlp.input_width() != 2 * radius + 1 || mlp.output_width() != 1 {
            return invalid(format!(
                "network {:?} does not map a radius-{radius} stencil to a scalar",
                mlp.widths()
            ));
        }
        if !(trained_dx > 0.0) || !(trained_dt > 0.0) {
            return invalid("trained dx and dt must be positive");
        }
        Ok(Self { mlp, radius, trained_dx, trained_dt, integrator: Integrator::Rk3Tvd, problem: None })
    }

    /// He-initialized network `2m+1 -> hidden... -> 1`.
    pub fn init(radius: usize, hidden: &[usize], trained_dx: f64, trained_dt: f64, seed: u64) -> Result<Self> {
        let mut widths = vec![2 * radius + 1];
        widths.extend_from_slice(hidden);
        widths.push(1);
        Self::new(Mlp::init_he(&widths, seed)?, radius, trained_dx, trained_dt)
    }

    /// Models are specific to the resolution they were trained at.
    pub fn check_resolution(&self, dx: f64) -> Result<()> {
        if (dx - self.trained_dx).abs() > DX_TOLERANCE * self.trained_dx {
            return Err(Error::ResolutionMismatch { trained: self.trained_dx, given: dx });
        }
        Ok(())
    }

    pub fn apply(&self, u: &[f64]) -> Result<Vec<f64>> {
        apply_operator(self, u)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            radius: self.radius,
            mlp: self.mlp.clone(),
            trained_dx: self.trained_dx,
            trained_dt: self.trained_dt,
        }
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self> {
        Self::new(ck.mlp, ck.radius, ck.trained_dx, ck.trained_dt)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        format::write_checkpoint(path, &self.to_checkpoint())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(format::read_checkpoint(path)?)
    }
}

/// `out_i = MLP(u_{i-m}, ..., u_{i+m})` with periodic wrap.
pub fn apply_operator(model: &StencilNetModel, u: &[f64]) -> Result<Vec<f64>> {
    let n = u.len();
    let m = model.radius;
    if 2 * m + 1 > n {
        return invalid(format!("field of {n} points is narrower than the radius-{m} stencil"));
    }
    let mut patches = Vec::with_capacity(n * (2 * m + 1));
    for i in 0..n {
        for o in -(m as isize)..=m as isize {
            patches.push(u[wrap(i, o, n)]);
        }
    }
    model.mlp.forward_batch(&patches, n)
}

/// Known additive forcing evaluated on a fixed set of grid points.
#[derive(Debug, Clone, PartialEq)]
pub struct ForcingContext {
    pub params: ForcingParams,
    pub points: Vec<f64>,
    /// Physical time of trajectory row 0.
    pub t0: f64,
}

impl ForcingContext {
    pub fn new(params: ForcingParams, grid: &Grid) -> Self {
        Self { params, points: grid.points(), t0: 0.0 }
    }

    pub fn field(&self, t: f64) -> Vec<f64> {
        self.params.eval(&self.points, self.t0 + t)
    }
}

/// `N_theta(u) + f(x, t)`.
pub fn model_rhs(model: &StencilNetModel, forcing: Option<&ForcingContext>, t: f64, u: &[f64]) -> Result<Vec<f64>> {
    let mut out = apply_operator(model, u)?;
    if let Some(f) = forcing {
        if f.points.len() != u.len() {
            return invalid("forcing grid differs from field length");
        }
        for (o, v) in out.iter_mut().zip(f.field(t)) {
            *o += v;
        }
    }
    Ok(out)
}

/// `|k|` RK3 steps of size `sign(k) * dt` from `u` at time `t`. Returns
/// the states after each step.
pub fn rollout_k(
    model: &StencilNetModel,
    u: &[f64],
    k: i64,
    t: f64,
    dt: f64,
    forcing: Option<&ForcingContext>,
) -> Result<Vec<Vec<f64>>> {
    if k == 0 {
        return invalid("rollout needs |k| >= 1");
    }
    if !(dt > 0.0) {
        return invalid("rollout dt must be positive");
    }
    let h = if k > 0 { dt } else { -dt };
    let mut out = Vec::with_capacity(k.unsigned_abs() as usize);
    let mut cur = u.to_vec();
    for s in 0..k.unsigned_abs() {
        let ts = t + s as f64 * h;
        cur = rk3_tvd_step_signed(&cur, ts, h, |tt, x| model_rhs(model, forcing, tt, x))
            .map_err(|e| match e {
                Error::Numerical(msg) => Error::Numerical(format!("rollout step {}: {msg}", s + 1)),
                other => other,
            })?;
        if let Some(j) = cur.iter().position(|v| v.abs() > crate::solvers::BLOW_UP) {
            return Err(Error::Numerical(format!("rollout step {}: |u| exceeds bound at point {j}", s + 1)));
        }
        out.push(cur.clone());
    }
    Ok(out)
}

/// One RK3 step recorded on a tape; same operation order as
/// [`rk3_tvd_step_signed`] so values agree bit for bit.
pub fn taped_rk3_step(
    tape: &mut Tape<'_>,
    u: NodeId,
    t: f64,
    dt: f64,
    forcing: Option<&ForcingContext>,
) -> Result<NodeId> {
    let rhs = |tape: &mut Tape<'_>, x: NodeId, tt: f64| -> Result<NodeId> {
        let op = tape.operator(x)?;
        match forcing {
            Some(f) => {
                let c = tape.constant(f.field(tt));
                tape.add(op, c)
            }
            None => Ok(op),
        }
    };
    let k1 = rhs(tape, u, t)?;
    let u1 = tape.linear(&[(1.0, u), (dt, k1)])?;
    let k2 = rhs(tape, u1, t + dt)?;
    let u2 = tape.linear(&[(1.0, u), (0.25 * dt, k1), (0.25 * dt, k2)])?;
    let k3 = rhs(tape, u2, t + 0.5 * dt)?;
    tape.linear(&[(1.0, u), (dt / 6.0, k1), (dt / 6.0, k2), (2.0 * dt / 3.0, k3)])
}

/// Latent per-point noise estimates, shaped like the training data.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseEstimate {
    pub n_steps: usize,
    pub n_points: usize,
    pub data: Vec<f64>,
}

impl NoiseEstimate {
    pub fn zeros(n_steps: usize, n_points: usize) -> Self {
        Self { n_steps, n_points, data: vec![0.0; n_steps * n_points] }
    }

    pub fn row(&self, n: usize) -> &[f64] {
        &self.data[n * self.n_points..(n + 1) * self.n_points]
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn to_trajectory(&self, grid: Grid, dt: f64) -> Result<Trajectory> {
        Trajectory::new(grid, dt, self.data.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    #[default]
    None,
    Learn,
}

impl std::str::FromStr for NoiseMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(NoiseMode::None),
            "learn" => Ok(NoiseMode::Learn),
            other => invalid(format!("unknown noise mode '{other}' (none, learn)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// RK steps integrated forward and backward from each anchor.
    pub q: usize,
    /// Loss weight `gamma^|k|` for the `k`-th step.
    pub gamma: f64,
    pub lambda_noise: f64,
    pub lambda_wd: f64,
    pub epochs: usize,
    /// Anchor pairs `(i, n)` per mini-batch; rounded to whole time rows.
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub radius: usize,
    pub hidden: Vec<usize>,
    pub noise: NoiseMode,
    /// Leave the known forcing out of the rollout so the network absorbs it.
    pub fold_forcing: bool,
    /// Learning-rate decay factor applied at 50% and 75% of the epochs.
    pub lr_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            q: 4,
            gamma: 0.9,
            lambda_noise: 1e-5,
            lambda_wd: 1e-8,
            epochs: 100,
            batch_size: 1024,
            lr: 1e-3,
            seed: 0,
            radius: 3,
            hidden: vec![64, 64, 64],
            noise: NoiseMode::None,
            fold_forcing: false,
            lr_decay: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, n_steps: usize, n_points: usize) -> Result<()> {
        if self.q == 0 {
            return invalid("training horizon q must be >= 1");
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return invalid(format!("gamma must lie in (0, 1], got {}", self.gamma));
        }
        if !(self.lambda_noise >= 0.0) || !(self.lambda_wd >= 0.0) {
            return invalid("penalty weights must be >= 0");
        }
        if !(self.lr > 0.0) || !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return invalid("learning rate must be positive and decay in (0, 1]");
        }
        if self.batch_size == 0 {
            return invalid("batch size must be positive");
        }
        if n_steps < 2 * self.q + 2 {
            return invalid(format!(
                "q = {} needs more than {} rows of data, got {n_steps}",
                self.q,
                2 * self.q + 1
            ));
        }
        if 2 * self.radius + 1 > n_points {
            return invalid("stencil is wider than the grid");
        }
        Ok(())
    }

    /// Time anchors per mini-batch.
    pub fn anchors_per_batch(&self, n_points: usize) -> usize {
        (self.batch_size / n_points.max(1)).max(1)
    }
}

/// Loss value split into its three parts.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossParts {
    pub mse_term: f64,
    pub noise_penalty: f64,
    pub wd_penalty: f64,
}

impl LossParts {
    pub fn total(&self) -> f64 {
        self.mse_term + self.noise_penalty + self.wd_penalty
    }
}

#[derive(Debug, Clone)]
pub struct LossEval {
    pub parts: LossParts,
    pub grad_params: Vec<f64>,
    /// Gradient with respect to every entry of the noise estimate.
    pub grad_noise: Vec<f64>,
}

/// Loss data shared by every evaluation.
pub struct LossProblem<'a> {
    pub data: &'a Trajectory,
    pub forcing: Option<&'a ForcingContext>,
    pub q: usize,
    pub gamma: f64,
    pub lambda_noise: f64,
    pub lambda_wd: f64,
    pub learn_noise: bool,
}

impl LossProblem<'_> {
    /// Valid anchors `n` with `q <= n < N_t - q`.
    pub fn anchors(&self) -> std::ops::Range<usize> {
        self.q..self.data.n_steps() - self.q
    }

    /// Windowed time-stepping loss of one anchor and its gradients. The
    /// noise gradient covers rows `n-q ..= n+q`, flattened.
    fn anchor_loss(&self, model: &StencilNetModel, noise: &NoiseEstimate, n: usize) -> Result<(f64, Vec<f64>, Vec<f64>)> {
        let q = self.q as i64;
        let dt = self.data.dt();
        let nx = self.data.n_points();
        let mut tape = Tape::new(&model.mlp, model.radius)?;
        // one leaf per noise row in the window
        let eta: Vec<NodeId> = (-q..=q)
            .map(|k| {
                let row = (n as i64 + k) as usize;
                if self.learn_noise {
                    tape.input(noise.row(row).to_vec())
                } else {
                    tape.constant(noise.row(row).to_vec())
                }
            })
            .collect();
        let v_n = tape.constant(self.data.row(n).to_vec());
        let start = tape.sub(v_n, eta[q as usize])?;
        let t_n = n as f64 * dt;
        let mut terms = Vec::with_capacity(2 * self.q);
        for dir in [1i64, -1] {
            let h = dir as f64 * dt;
            let mut cur = start;
            for k in 1..=q {
                cur = taped_rk3_step(&mut tape, cur, t_n + (k - 1) as f64 * h, h, self.forcing)?;
                let row = (n as i64 + dir * k) as usize;
                let target = tape.constant(self.data.row(row).to_vec());
                let pred = tape.add(cur, eta[(q + dir * k) as usize])?;
                let r = tape.sub(target, pred)?;
                let ss = tape.sum_squares(r, None)?;
                terms.push((self.gamma.powi(k as i32), ss));
            }
        }
        let total = tape.linear(&terms)?;
        let value = tape.scalar(total);
        let g = grad(&tape, total)?;
        let mut g_noise = Vec::with_capacity((2 * self.q + 1) * nx);
        if self.learn_noise {
            for &id in &eta {
                g_noise.extend_from_slice(g.input(id).expect("noise leaf"));
            }
        }
        Ok((value, g.params, g_noise))
    }

    /// Loss over `anchors`, with the data term scaled by `scale`. The
    /// penalties cover the whole noise matrix and every weight.
    pub fn evaluate(
        &self,
        model: &StencilNetModel,
        noise: &NoiseEstimate,
        anchors: &[usize],
        scale: f64,
    ) -> Result<LossEval> {
        let nx = self.data.n_points();
        if noise.n_steps != self.data.n_steps() || noise.n_points != nx {
            return invalid("noise estimate shape differs from data");
        }
        if let Some(&bad) = anchors.iter().find(|&&n| !self.anchors().contains(&n)) {
            return invalid(format!("anchor {bad} leaves fewer than q = {} rows on one side", self.q));
        }
        let results: Vec<Result<(f64, Vec<f64>, Vec<f64>)>> = anchors
            .par_iter()
            .map(|&n| self.anchor_loss(model, noise, n))
            .collect();
        let mut mse = 0.0;
        let mut grad_params = vec![0.0; model.mlp.n_params()];
        let mut grad_noise = vec![0.0; noise.data.len()];
        for (&n, res) in anchors.iter().zip(results) {
            let (v, gp, gn) = res?;
            mse += v;
            for (a, b) in grad_params.iter_mut().zip(&gp) {
                *a += scale * b;
            }
            if self.learn_noise {
                let off = (n - self.q) * nx;
                for (a, b) in grad_noise[off..off + gn.len()].iter_mut().zip(&gn) {
                    *a += scale * b;
                }
            }
        }
        let mut parts = LossParts { mse_term: scale * mse, ..Default::default() };
        if self.learn_noise && self.lambda_noise > 0.0 {
            parts.noise_penalty = self.lambda_noise * noise.frobenius_sq();
            for (g, v) in grad_noise.iter_mut().zip(&noise.data) {
                *g += 2.0 * self.lambda_noise * v;
            }
        }
        if self.lambda_wd > 0.0 {
            parts.wd_penalty = self.lambda_wd * model.mlp.weight_norm_sq();
            for ((g, &p), keep) in grad_params.iter_mut().zip(model.mlp.params()).zip(model.mlp.weight_mask()) {
                if keep {
                    *g += 2.0 * self.lambda_wd * p;
                }
            }
        }
        Ok(LossEval { parts, grad_params, grad_noise })
    }

    /// The full loss over every anchor.
    pub fn full(&self, model: &StencilNetModel, noise: &NoiseEstimate) -> Result<LossEval> {
        let anchors: Vec<usize> = self.anchors().collect();
        self.evaluate(model, noise, &anchors, 1.0)
    }
}

/// One line of the loss history.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub mse_term: f64,
    pub noise_penalty: f64,
    pub wd_penalty: f64,
}

pub const LOSS_CSV_HEADER: &str = "epoch,loss,mse_term,noise_penalty,wd_penalty";

impl EpochRecord {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{:e},{:e},{:e},{:e}",
            self.epoch, self.loss, self.mse_term, self.noise_penalty, self.wd_penalty
        )
    }
}

pub fn loss_history_csv(history: &[EpochRecord]) -> String {
    let mut s = String::from(LOSS_CSV_HEADER);
    s.push('\n');
    for r in history {
        s.push_str(&r.csv_line());
        s.push('\n');
    }
    s
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters with the lowest epoch loss.
    pub model: StencilNetModel,
    pub noise: NoiseEstimate,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
}

pub fn train(data: &Trajectory, cfg: &TrainConfig, forcing: Option<&ForcingContext>) -> Result<TrainOutcome> {
    train_with(data, cfg, forcing, None, |_| {})
}

/// Trains from `init` (or a fresh He initialization) and calls `on_epoch`
/// after every epoch. Epoch loss is the sum of the per-anchor data terms
/// seen during the epoch plus the penalties at its end.
pub fn train_with(
    data: &Trajectory,
    cfg: &TrainConfig,
    forcing: Option<&ForcingContext>,
    init: Option<StencilNetModel>,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    let (nt, nx) = (data.n_steps(), data.n_points());
    cfg.validate(nt, nx)?;
    let forcing = if cfg.fold_forcing { None } else { forcing };
    let mut model = match init {
        Some(m) => {
            m.check_resolution(data.grid().dx())?;
            m
        }
        None => StencilNetModel::init(cfg.radius, &cfg.hidden, data.grid().dx(), data.dt(), cfg.seed)?,
    };
    model.trained_dt = data.dt();
    let learn_noise = cfg.noise == NoiseMode::Learn;
    let problem = LossProblem {
        data,
        forcing,
        q: cfg.q,
        gamma: cfg.gamma,
        lambda_noise: cfg.lambda_noise,
        lambda_wd: cfg.lambda_wd,
        learn_noise,
    };
    let mut noise = NoiseEstimate::zeros(nt, nx);
    let mut anchors: Vec<usize> = problem.anchors().collect();
    let n_anchors = anchors.len();
    let per_batch = cfg.anchors_per_batch(nx).min(n_anchors);
    let scale = n_anchors as f64 / per_batch as f64;
    let mut adam_theta = AdamState::with_lr(model.mlp.n_params(), cfg.lr);
    let mut adam_noise = AdamState::with_lr(if learn_noise { noise.data.len() } else { 0 }, cfg.lr);
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed ^ 0x7a11_5eed);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, StencilNetModel, NoiseEstimate)> = None;

    for epoch in 0..cfg.epochs {
        let lr = if epoch >= 3 * cfg.epochs / 4 {
            cfg.lr * cfg.lr_decay * cfg.lr_decay
        } else if epoch >= cfg.epochs / 2 {
            cfg.lr * cfg.lr_decay
        } else {
            cfg.lr
        };
        adam_theta.lr = lr;
        adam_noise.lr = lr;
        anchors.shuffle(&mut rng);
        let mut mse_sum = 0.0;
        for batch in anchors.chunks(per_batch) {
            let eval = problem.evaluate(&model, &noise, batch, scale)?;
            if !eval.parts.total().is_finite() || eval.grad_params.iter().any(|g| !g.is_finite()) {
                return Err(Error::Diverged { epoch, detail: "non-finite loss or gradient".into() });
            }
            mse_sum += eval.parts.mse_term / scale;
            adam_theta.step(model.mlp.params_mut(), &eval.grad_params)?;
            if learn_noise {
                adam_noise.step(&mut noise.data, &eval.grad_noise)?;
            }
        }
        let noise_penalty = if learn_noise { cfg.lambda_noise * noise.frobenius_sq() } else { 0.0 };
        let wd_penalty = cfg.lambda_wd * model.mlp.weight_norm_sq();
        let rec = EpochRecord {
            epoch,
            loss: mse_sum + noise_penalty + wd_penalty,
            mse_term: mse_sum,
            noise_penalty,
            wd_penalty,
        };
        if !rec.loss.is_finite() {
            return Err(Error::Diverged { epoch, detail: "non-finite epoch loss".into() });
        }
        on_epoch(&rec);
        history.push(rec);
        if best.as_ref().is_none_or(|b| rec.loss < b.0) {
            best = Some((rec.loss, epoch, model.clone(), noise.clone()));
        }
    }
    let (best_epoch, model, noise) = match best {
        Some((_, e, m, nz)) => (e, m, nz),
        None => (0, model, noise),
    };
    Ok(TrainOutcome { model, noise, history, best_epoch })
}

/// A radius-1 single-layer network realizing `coef * (1, -2, 1) / dx^2`.
pub fn planted_diffusion_model(coef: f64, dx: f64, dt: f64) -> Result<StencilNetModel> {
    let s = crate::solvers::fd_weights(2, 2, &[-1, 0, 1])?;
    let w = s.scaled_weights(dx, coef);
    let mlp = Mlp::from_layers(vec![(1, 3, w, vec![0.0])])?;
    StencilNetModel::new(mlp, 1, dx, dt)
}
