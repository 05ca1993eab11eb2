use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use stencilnet::datagen::ks_ic;
use stencilnet::metrics::{
    denoise_report, lyapunov_max, mse, mse_per_step, power_spectrum, power_spectrum_default, LinearDynamics,
    LyapunovConfig, SpectralDynamics,
};
use stencilnet::solvers::{simulate, PdeProblem, Scheme};
use stencilnet::{Grid, Trajectory};

fn random_traj(seed: u64, rows: usize, n: usize) -> Trajectory {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..rows * n).map(|_| rng.random_range(-2.0..2.0)).collect();
    Trajectory::new(Grid::new(TAU, n).unwrap(), 0.1, data).unwrap()
}

#[test]
fn spectrum_satisfies_parseval() {
    for n in [16, 17, 64] {
        let traj = random_traj(n as u64, 12, n);
        let spec = power_spectrum(&traj, 0, traj.n_steps()).unwrap();
        let mean_sq: f64 = traj.data().iter().map(|v| v * v).sum::<f64>() / traj.data().len() as f64;
        let total: f64 = spec.iter().sum();
        assert!((total - mean_sq).abs() < 1e-10 * mean_sq, "n={n}: {total} vs {mean_sq}");
    }
}

#[test]
fn default_spectrum_uses_second_half() {
    let traj = random_traj(3, 10, 32);
    assert_eq!(power_spectrum_default(&traj).unwrap(), power_spectrum(&traj, 5, 10).unwrap());
}

#[test]
fn mse_matches_direct_sum() {
    let a = random_traj(1, 7, 20);
    let b = random_traj(2, 7, 20);
    let mut direct = 0.0;
    for n in 0..7 {
        for i in 0..20 {
            let d = a.row(n)[i] - b.row(n)[i];
            direct += d * d;
        }
    }
    direct /= 140.0;
    assert!((mse(&a, &b).unwrap() - direct).abs() < 1e-14 * direct);
    let per = mse_per_step(&a, &b).unwrap();
    assert_eq!(per.len(), 7);
    assert!((per.iter().sum::<f64>() / 7.0 - direct).abs() < 1e-14 * direct);
    assert!(mse(&a, &random_traj(2, 6, 20)).is_err());
}

#[test]
fn lyapunov_of_linear_expansion() {
    let rate = 0.3;
    let mut dynm = LinearDynamics { rate, dt: 0.01 };
    let cfg = LyapunovConfig { n_steps: 1000, n_directions: 3, ..Default::default() };
    let rep = lyapunov_max(&mut dynm, &[1.0, -0.5, 0.25, 2.0], &cfg).unwrap();
    assert!((rep.lambda - rate).abs() < 0.05 * rate, "lambda {}", rep.lambda);
    assert!(rep.window.is_some());
}

fn ks_lambda(delta_rel: f64) -> f64 {
    let grid = Grid::with_origin(64.0, 64, -32.0).unwrap();
    let mut dynm = SpectralDynamics::new(&PdeProblem::ks(), &grid, 0.05).unwrap();
    let cfg = LyapunovConfig { delta_rel, spinup: 2000, n_steps: 6000, ..Default::default() };
    lyapunov_max(&mut dynm, &ks_ic(0, &grid), &cfg).unwrap().lambda
}

#[test]
fn ks_ground_truth_lyapunov() {
    let l1 = ks_lambda(1e-7);
    let l2 = ks_lambda(2e-7);
    assert!((0.05..=0.12).contains(&l1), "lambda {l1}");
    assert!((l1 - l2).abs() < 0.1 * l1, "lambda {l1} vs {l2} after doubling the perturbation");
}

#[test]
fn ks_solution_is_chaotic_but_bounded() {
    let grid = Grid::with_origin(64.0, 128, -32.0).unwrap();
    let traj = simulate(&PdeProblem::ks(), &grid, &ks_ic(2, &grid), 300.0, Scheme::Spectral, None).unwrap();
    assert!(traj.max_abs() < 5.0);
    let spec = power_spectrum(&traj, 2000, traj.n_steps()).unwrap();
    // energy concentrates in the unstable band k < L / (2 pi)
    let low: f64 = spec[1..=10].iter().sum();
    let high: f64 = spec[30..].iter().sum();
    assert!(low > 100.0 * high, "{low} {high}");
}

#[test]
fn denoise_report_on_noisy_copy() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let truth: Vec<f64> = (0..5000).map(|_| rng.sample::<f64, _>(StandardNormal) * 0.2).collect();
    let est: Vec<f64> = truth.iter().map(|v| v + 0.02 * rng.sample::<f64, _>(StandardNormal)).collect();
    let rep = denoise_report(&est, &truth).unwrap();
    assert!(rep.correlation > 0.99, "{}", rep.correlation);
    assert!((rep.std_ratio - 1.0).abs() < 0.02);
    assert!(rep.ks_statistic < 0.05);
    assert_eq!(rep.hist_estimate.iter().sum::<usize>(), 5000);
    assert_eq!(rep.hist_truth.len(), 50);
}
