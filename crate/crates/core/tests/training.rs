use std::f64::consts::TAU;

use stencilnet::datagen::{make_dataset, RecipeConfig};
use stencilnet::stencilnet::{
    planted_diffusion_model, train, train_with, ForcingContext, LossProblem, NoiseEstimate, StencilNetModel,
};
use stencilnet::{Error, Grid, TrainConfig, Trajectory};

/// Exact solution of the semi-discrete heat equation `u' = coef * D2 u`
/// for a two-mode initial field.
fn semi_discrete_heat(coef: f64, n: usize, dt: f64, rows: usize) -> Trajectory {
    let grid = Grid::new(TAU, n).unwrap();
    let dx = grid.dx();
    let rate = |k: f64| coef * (2.0 * (k * dx).cos() - 2.0) / (dx * dx);
    let data = (0..rows)
        .flat_map(|r| {
            let t = r as f64 * dt;
            grid.points()
                .into_iter()
                .map(move |x| x.sin() * (rate(1.0) * t).exp() + 0.5 * (3.0 * x + 0.4).cos() * (rate(3.0) * t).exp())
        })
        .collect();
    Trajectory::new(grid, dt, data).unwrap()
}

fn problem(data: &Trajectory, q: usize) -> LossProblem<'_> {
    LossProblem { data, forcing: None, q, gamma: 0.9, lambda_noise: 0.0, lambda_wd: 0.0, learn_noise: false }
}

#[test]
fn planted_loss_shrinks_at_third_order() {
    // windowed loss of the exact operator is pure RK3 truncation error:
    // O(dt^4) per state, so the squared residual drops by 2^8 per halving
    let per_anchor = |dt: f64| {
        let data = semi_discrete_heat(0.05, 32, dt, 41);
        let model = planted_diffusion_model(0.05, data.grid().dx(), dt).unwrap();
        let p = problem(&data, 2);
        let noise = NoiseEstimate::zeros(data.n_steps(), data.n_points());
        let anchor = [20usize];
        p.evaluate(&model, &noise, &anchor, 1.0).unwrap().parts.mse_term
    };
    let l1 = per_anchor(0.04);
    let l2 = per_anchor(0.02);
    assert!(l1 < 1e-12, "{l1}");
    let ratio = l1 / l2;
    assert!((128.0..512.0).contains(&ratio), "ratio {ratio}");
}

#[test]
fn planted_loss_below_random_model() {
    let data = semi_discrete_heat(0.05, 32, 0.04, 41);
    let p = problem(&data, 4);
    let noise = NoiseEstimate::zeros(data.n_steps(), data.n_points());
    let planted = planted_diffusion_model(0.05, data.grid().dx(), 0.04).unwrap();
    let random = StencilNetModel::init(1, &[8], data.grid().dx(), 0.04, 0).unwrap();
    let lp = p.full(&planted, &noise).unwrap().parts.total();
    let lr = p.full(&random, &noise).unwrap().parts.total();
    assert!(lp < 1e-10 && lp < 1e-6 * lr, "{lp} vs {lr}");
}

#[test]
fn loss_is_invariant_to_time_shift() {
    let data = semi_discrete_heat(0.05, 32, 0.04, 41);
    let model = StencilNetModel::init(2, &[8, 8], data.grid().dx(), 0.04, 1).unwrap();
    let shifted = data.crop_rows(5, data.n_steps()).unwrap();
    let noise_a = NoiseEstimate::zeros(data.n_steps(), 32);
    let noise_b = NoiseEstimate::zeros(shifted.n_steps(), 32);
    let a = problem(&data, 3).evaluate(&model, &noise_a, &[17], 1.0).unwrap();
    let b = problem(&shifted, 3).evaluate(&model, &noise_b, &[12], 1.0).unwrap();
    assert_eq!(a.parts.mse_term.to_bits(), b.parts.mse_term.to_bits());
    assert_eq!(a.grad_params, b.grad_params);
}

#[test]
fn training_reduces_burgers_loss() {
    let cfg = RecipeConfig { n_points: 64, t_total: 8.0, t_train: 8.0, coarse_factors: vec![4], ..RecipeConfig::burgers() };
    let ds = make_dataset(&cfg, 0).unwrap();
    let data = &ds.coarse_for(4).unwrap().clean;
    let fc = ForcingContext::new(ds.meta.problem.forcing.clone().unwrap(), data.grid());
    let tc = TrainConfig { epochs: 40, q: 2, hidden: vec![16, 16], lr: 3e-3, ..Default::default() };
    let out = train_with(data, &tc, Some(&fc), None, |_| {}).unwrap();
    assert_eq!(out.history.len(), 40);
    let first = out.history[0].loss;
    let best = out.history[out.best_epoch].loss;
    assert!(best < 0.2 * first, "{first} -> {best}");
}

#[test]
fn divergence_is_reported() {
    // a huge sample overflows the squared residual to infinity
    let clean = semi_discrete_heat(0.05, 16, 0.04, 21);
    let mut values = clean.data().to_vec();
    values[16 * 10 + 3] = 1e200;
    let data = Trajectory::new(*clean.grid(), clean.dt(), values).unwrap();
    let tc = TrainConfig { epochs: 5, q: 2, hidden: vec![8], ..Default::default() };
    match train(&data, &tc, None) {
        Err(Error::Diverged { epoch, .. }) => assert_eq!(epoch, 0),
        other => panic!("expected divergence, got {:?}", other.map(|o| o.history.len())),
    }
}

#[test]
fn init_model_must_match_resolution() {
    let data = semi_discrete_heat(0.05, 16, 0.04, 21);
    let wrong = StencilNetModel::init(1, &[4], 0.5 * data.grid().dx(), 0.04, 0).unwrap();
    let tc = TrainConfig { epochs: 1, q: 2, ..Default::default() };
    assert!(matches!(train_with(&data, &tc, None, Some(wrong), |_| {}), Err(Error::ResolutionMismatch { .. })));
}
