use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use stencilnet::datagen::{make_dataset, Dataset, DatasetMeta};
use stencilnet::format::{read_trajectory, write_trajectory};
use stencilnet::grid::{subsample, Trajectory};
use stencilnet::metrics::{
    bench_csv, denoise_report, lyapunov_csv, lyapunov_max, model_operator, power_spectrum_default, predict,
    speedup_bench, BenchConfig, EvalReport, LyapunovSummary, ModelDynamics,
};
use stencilnet::solvers::weno_rhs_burgers;
use stencilnet::stencilnet::{train_with, ForcingContext, NoiseMode, LOSS_CSV_HEADER};
use stencilnet::{Error, StencilNetModel};

use crate::config::ExperimentConfig;
use crate::{BenchArgs, Common, EvaluateArgs, GenerateArgs, PredictArgs, TrainArgs};

const META_FILE: &str = "meta.json";

fn init_threads(common: &Common) -> Result<()> {
    if let Some(n) = common.threads {
        if n == 0 {
            return Err(Error::InvalidArgument("--threads must be positive".into()).into());
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Internal(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn io<T>(r: std::io::Result<T>, what: impl FnOnce() -> String) -> Result<T> {
    r.map_err(Error::from).with_context(what)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    io(fs::write(path, text), || format!("writing {}", path.display()))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(Error::from)?;
    write_text(path, &text)
}

fn out_dir(common: &Common, cfg: &ExperimentConfig, fallback: &str) -> Result<PathBuf> {
    let dir = common.out.clone().or_else(|| cfg.out.clone()).unwrap_or_else(|| PathBuf::from(fallback));
    io(fs::create_dir_all(&dir), || format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn coarse_file(c: usize) -> String {
    format!("coarse_c{c}.stn1")
}

fn noisy_file(c: usize) -> String {
    format!("noisy_c{c}.stn1")
}

fn noise_file(c: usize) -> String {
    format!("noise_c{c}.stn1")
}

pub fn write_dataset(dir: &Path, ds: &Dataset) -> Result<()> {
    write_trajectory(dir.join("fine.stn1"), &ds.fine)?;
    for set in &ds.coarse {
        let c = set.meta.c_space;
        write_trajectory(dir.join(coarse_file(c)), &set.clean)?;
        if let Some((noisy, noise)) = &set.noisy {
            write_trajectory(dir.join(noisy_file(c)), noisy)?;
            let eta = Trajectory::new(*noisy.grid(), noisy.dt(), noise.clone())?;
            write_trajectory(dir.join(noise_file(c)), &eta)?;
        }
    }
    write_json(&dir.join(META_FILE), &ds.meta)
}

pub fn generate(common: &Common, args: &GenerateArgs) -> Result<()> {
    init_threads(common)?;
    let mut cfg = ExperimentConfig::load(common.config.as_deref(), args.recipe)?;
    let d = &mut cfg.dataset;
    if let Some(s) = args.sigma {
        d.sigma = s;
    }
    if let Some(n) = args.n_points {
        d.n_points = n;
    }
    if let Some(l) = args.length {
        d.length = l;
    }
    if let Some(t) = args.t_total {
        d.t_total = t;
        d.t_train = d.t_train.min(t);
    }
    if let Some(c) = &args.coarse {
        d.coarse_factors = c.clone();
    }
    d.validate()?;
    let seed = common.seed.unwrap_or(cfg.seed);
    let dir = out_dir(common, &cfg, "data")?;
    let ds = make_dataset(&cfg.dataset, seed)?;
    write_dataset(&dir, &ds)?;
    println!(
        "fine: {} x {} points, dx = {:.6}, dt = {}",
        ds.fine.n_steps(),
        ds.fine.n_points(),
        ds.meta.fine_dx,
        ds.fine.dt()
    );
    for c in &ds.meta.coarse {
        println!(
            "C = {}: {} x {} points, dx = {:.6}, dt = {}, CFL advective {:.3}, diffusive {:.3}{}",
            c.c_space,
            c.n_steps,
            c.n_points,
            c.dx,
            c.dt,
            c.cfl_advective,
            c.cfl_diffusive,
            if ds.meta.noise.is_some() { ", noisy copy written" } else { "" }
        );
    }
    println!("wrote {}", dir.display());
    Ok(())
}

fn read_meta(dir: &Path) -> Result<DatasetMeta> {
    let p = dir.join(META_FILE);
    let text = io(fs::read_to_string(&p), || format!("reading {}", p.display()))?;
    Ok(serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", p.display())))?)
}

fn data_dir(arg: &Option<PathBuf>, cfg: &ExperimentConfig) -> Result<PathBuf> {
    arg.clone()
        .or_else(|| cfg.data.clone())
        .ok_or_else(|| Error::InvalidArgument("no dataset directory (--data)".into()).into())
}

fn pick_factor(meta: &DatasetMeta, arg: Option<usize>, cfg: &ExperimentConfig) -> Result<usize> {
    let c = arg.or(cfg.c).or_else(|| meta.coarse.first().map(|c| c.c_space));
    match c {
        Some(c) if meta.coarse.iter().any(|m| m.c_space == c) => Ok(c),
        Some(c) => Err(Error::InvalidArgument(format!("dataset has no coarse variant C = {c}")).into()),
        None => Err(Error::InvalidArgument("dataset has no coarse variants".into()).into()),
    }
}

fn forcing_for(meta: &DatasetMeta, traj: &Trajectory) -> Option<ForcingContext> {
    meta.problem.forcing.clone().map(|f| ForcingContext::new(f, traj.grid()))
}

fn optional_traj(path: PathBuf) -> Result<Option<Trajectory>> {
    if path.exists() {
        Ok(Some(read_trajectory(path)?))
    } else {
        Ok(None)
    }
}

fn write_eval(dir: &Path, report: &EvalReport, dt: f64) -> Result<()> {
    write_text(&dir.join("report.json"), &report.to_json()?)?;
    write_text(&dir.join("mse.csv"), &report.mse_csv(dt))?;
    write_text(&dir.join("spectrum.csv"), &report.spectrum_csv())
}

pub fn train(common: &Common, args: &TrainArgs, denoise: bool) -> Result<()> {
    init_threads(common)?;
    let mut cfg = ExperimentConfig::load(common.config.as_deref(), None)?;
    let t = &mut cfg.train;
    macro_rules! set {
        ($($field:ident),*) => { $( if let Some(v) = args.$field.clone() { t.$field = v; } )* };
    }
    set!(q, epochs, lr, batch_size, gamma, lambda_noise, lambda_wd, radius, hidden, noise);
    if let Some(s) = common.seed {
        t.seed = s;
    }
    if denoise {
        t.noise = NoiseMode::Learn;
    }
    let dir = data_dir(&args.data, &cfg)?;
    let meta = read_meta(&dir)?;
    let c = pick_factor(&meta, args.c, &cfg)?;
    let mut clean = read_trajectory(dir.join(coarse_file(c)))?;
    let mut observed = optional_traj(dir.join(noisy_file(c)))?.unwrap_or_else(|| clean.clone());
    let mut truth_noise = optional_traj(dir.join(noise_file(c)))?;
    if let Some(r) = args.rows {
        clean = clean.crop_rows(0, r)?;
        observed = observed.crop_rows(0, r)?;
        truth_noise = truth_noise.map(|t| t.crop_rows(0, r)).transpose()?;
    }
    cfg.train.validate(observed.n_steps(), observed.n_points())?;
    let forcing = forcing_for(&meta, &observed);
    let out = out_dir(common, &cfg, "run")?;

    let loss_path = out.join("loss.csv");
    let mut loss_file = io(File::create(&loss_path), || format!("creating {}", loss_path.display()))?;
    io(writeln!(loss_file, "{LOSS_CSV_HEADER}"), || "writing loss history".into())?;
    let mut write_err = None;
    let outcome = train_with(&observed, &cfg.train, forcing.as_ref(), None, |r| {
        if write_err.is_none() {
            if let Err(e) = writeln!(loss_file, "{}", r.csv_line()).and_then(|_| loss_file.flush()) {
                write_err = Some(e);
            }
        }
    });
    if let Some(e) = write_err {
        return Err(Error::from(e)).context("writing loss history");
    }
    let outcome = outcome.context("training")?;
    let mut model = outcome.model;
    model.problem = Some(format!("{:?}", meta.config.recipe).to_lowercase());
    model.save(out.join("model.stnm"))?;
    let first = outcome.history.first().map_or(f64::NAN, |r| r.loss);
    let best = outcome.history[outcome.best_epoch].loss;
    println!(
        "trained {} epochs on C = {c} ({} x {}): loss {first:.4e} -> {best:.4e} (best epoch {})",
        outcome.history.len(),
        observed.n_steps(),
        observed.n_points(),
        outcome.best_epoch
    );

    if cfg.train.noise == NoiseMode::Learn {
        let est = outcome.noise.to_trajectory(*observed.grid(), observed.dt())?;
        write_trajectory(out.join("noise_estimate.stn1"), &est)?;
        let denoised: Vec<f64> = observed.data().iter().zip(est.data()).map(|(v, n)| v - n).collect();
        write_trajectory(out.join("denoised.stn1"), &Trajectory::new(*observed.grid(), observed.dt(), denoised)?)?;
        if let Some(truth) = &truth_noise {
            let rep = denoise_report(est.data(), truth.data())?;
            println!(
                "noise estimate: correlation {:.3}, std ratio {:.3}, KS statistic {:.3}",
                rep.correlation, rep.std_ratio, rep.ks_statistic
            );
            write_json(&out.join("denoise.json"), &rep)?;
        }
    }

    // The checkpoint is already on disk; an unstable rollout is a finding
    // about the model, not a failed command.
    match predict(&model, clean.grid(), clean.row(0), clean.n_steps() - 1, forcing.as_ref()) {
        Ok(pred) => {
            let report = EvalReport::new(&pred, &clean)?;
            println!("training-window rollout MSE {:.4e}", report.mse);
            write_eval(&out, &report, clean.dt())?;
        }
        Err(Error::BlowUp { time, step }) => {
            eprintln!("warning: training-window rollout blew up at t = {time} (step {step})");
            write_json(&out.join("report.json"), &serde_json::json!({ "blow_up": { "time": time, "step": step } }))?;
        }
        Err(e) => return Err(e).context("rollout over the training window"),
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn load_model(arg: &Option<PathBuf>, cfg: &ExperimentConfig) -> Result<StencilNetModel> {
    let p = arg
        .clone()
        .or_else(|| cfg.model.clone())
        .ok_or_else(|| Error::InvalidArgument("no checkpoint (--model)".into()))?;
    StencilNetModel::load(&p).with_context(|| format!("loading {}", p.display()))
}

pub fn predict_cmd(common: &Common, args: &PredictArgs) -> Result<()> {
    init_threads(common)?;
    let cfg = ExperimentConfig::load(common.config.as_deref(), None)?;
    let model = load_model(&args.model, &cfg)?;
    let input = read_trajectory(&args.input)?;
    if args.row >= input.n_steps() {
        return Err(Error::InvalidArgument(format!("row {} outside {} rows", args.row, input.n_steps())).into());
    }
    let forcing = match &args.data {
        Some(d) => {
            let meta = read_meta(d)?;
            forcing_for(&meta, &input).map(|mut f| {
                f.t0 = input.time(args.row);
                f
            })
        }
        None => None,
    };
    let traj = predict(&model, input.grid(), input.row(args.row), args.steps, forcing.as_ref())?;
    let path = common.out.clone().unwrap_or_else(|| PathBuf::from("prediction.stn1"));
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        io(fs::create_dir_all(parent), || format!("creating {}", parent.display()))?;
    }
    write_trajectory(&path, &traj)?;
    println!("{} steps, max |u| = {:.4}, wrote {}", args.steps, traj.max_abs(), path.display());
    Ok(())
}

/// `truth` resampled to the model's time step.
fn align_time(truth: Trajectory, model_dt: f64) -> Result<Trajectory> {
    let ratio = model_dt / truth.dt();
    let k = ratio.round();
    if k < 1.0 || (ratio - k).abs() > 1e-6 {
        return Err(Error::InvalidArgument(format!(
            "model step {model_dt} is not a multiple of the data step {}",
            truth.dt()
        ))
        .into());
    }
    Ok(subsample(&truth, 1, k as usize)?)
}

pub fn evaluate(common: &Common, args: &EvaluateArgs) -> Result<()> {
    init_threads(common)?;
    let mut cfg = ExperimentConfig::load(common.config.as_deref(), None)?;
    if let Some(h) = args.horizon_factor {
        cfg.eval.horizon_factor = h;
    }
    cfg.eval.lyapunov |= args.lyapunov;
    if cfg.eval.horizon_factor == 0 {
        return Err(Error::InvalidArgument("horizon factor must be >= 1".into()).into());
    }
    let model = load_model(&args.model, &cfg)?;
    let dir = data_dir(&args.data, &cfg)?;
    let meta = read_meta(&dir)?;
    let c = pick_factor(&meta, args.c, &cfg)?;
    let truth = align_time(read_trajectory(dir.join(coarse_file(c)))?, model.trained_dt)?;
    model.check_resolution(truth.grid().dx())?;
    let forcing = forcing_for(&meta, &truth);
    let steps = (truth.n_steps() - 1) * cfg.eval.horizon_factor;
    let pred = predict(&model, truth.grid(), truth.row(0), steps, forcing.as_ref())?;
    let window = pred.crop_rows(0, truth.n_steps())?;
    let mut report = EvalReport::new(&window, &truth)?;
    report.spectrum = power_spectrum_default(&pred)?.into_iter().enumerate().collect();
    let out = out_dir(common, &cfg, "eval")?;
    if cfg.eval.lyapunov {
        let mut dynamics = ModelDynamics { model: &model, forcing: forcing.as_ref(), t: 0.0 };
        let lyap = lyapunov_max(&mut dynamics, truth.row(0), &cfg.eval.lyapunov_config)?;
        println!("lambda_max {:.4}", lyap.lambda);
        write_text(&out.join("lyapunov.csv"), &lyapunov_csv(&lyap))?;
        report.lyapunov = Some(LyapunovSummary::from(&lyap));
    }
    println!(
        "rollout of {steps} steps: MSE {:.4e} over the data window, max |u| {:.4}",
        report.mse,
        pred.max_abs()
    );
    write_eval(&out, &report, truth.dt())?;
    write_trajectory(out.join("prediction.stn1"), &pred)?;
    println!("wrote {}", out.display());
    Ok(())
}

pub fn bench(common: &Common, args: &BenchArgs) -> Result<()> {
    init_threads(common)?;
    let cfg = ExperimentConfig::load(common.config.as_deref(), None)?;
    let model = match args.model.clone().or_else(|| cfg.model.clone()) {
        Some(p) => StencilNetModel::load(&p).with_context(|| format!("loading {}", p.display()))?,
        None => StencilNetModel::init(cfg.train.radius, &cfg.train.hidden, 1.0, 1.0, common.seed.unwrap_or(cfg.seed))?,
    };
    if args.viscosity < 0.0 {
        return Err(Error::InvalidArgument("viscosity must be >= 0".into()).into());
    }
    let bench_cfg = BenchConfig {
        sizes: args.grid.clone(),
        repetitions: args.reps,
        warmup: args.warmup,
        factors: args.factors.clone(),
        dimension: 1,
        has_diffusion: args.viscosity > 0.0,
        length: 2.0 * std::f64::consts::PI,
    };
    let visc = args.viscosity;
    let baseline = move |u: &[f64], dx: f64| weno_rhs_burgers(u, visc, &vec![0.0; u.len()], dx);
    let op = model_operator(&model);
    let rows = speedup_bench(&baseline, &op, &bench_cfg)?;
    let out = out_dir(common, &cfg, "bench")?;
    write_text(&out.join("bench.csv"), &bench_csv(&rows))?;
    write_json(&out.join("bench.json"), &rows)?;
    for r in &rows {
        let kap: Vec<String> = r.kappa.iter().map(|(c, k)| format!("C={c}: {k:.1}")).collect();
        println!(
            "N = {}: t_s {:.3e} s, t_n {:.3e} s per point, t_n/t_s {:.2}; kappa {}{}",
            r.n_points,
            r.t_s,
            r.t_n,
            r.ratio,
            kap.join(", "),
            if r.unreliable { " (timing spread > 20%)" } else { "" }
        );
    }
    Ok(())
}
