use std::path::Path;
use std::process::{Command, Output};
use std::time::Instant;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stencilnet"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn stencilnet")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn code(dir: &Path, args: &[&str]) -> (i32, String) {
    let out = run(dir, args);
    (out.status.code().unwrap_or(-1), String::from_utf8_lossy(&out.stderr).into_owned())
}

const SMALL_NET: &[&str] = &["--epochs", "1", "--q", "1", "--hidden", "8,8"];

fn roundtrip(dir: &Path, gen: &[&str], c: &str) {
    let mut g = vec!["generate", "--out", "data"];
    g.extend_from_slice(gen);
    let summary = ok(dir, &g);
    assert!(summary.contains("dx ="), "{summary}");
    assert!(dir.join("data/meta.json").exists());
    assert!(dir.join(format!("data/coarse_c{c}.stn1")).exists());

    let mut t = vec!["train", "--data", "data", "--c", c, "--out", "run"];
    t.extend_from_slice(SMALL_NET);
    ok(dir, &t);
    for f in ["model.stnm", "loss.csv", "report.json", "mse.csv", "spectrum.csv"] {
        assert!(dir.join("run").join(f).exists(), "missing {f}");
    }

    let input = format!("data/coarse_c{c}.stn1");
    ok(dir, &["predict", "--model", "run/model.stnm", "--input", &input, "--steps", "3", "--data", "data", "--out", "pred.stn1"]);
    let pred = stencilnet::format::read_trajectory(dir.join("pred.stn1")).unwrap();
    assert_eq!(pred.n_steps(), 4);

    ok(dir, &["evaluate", "--model", "run/model.stnm", "--data", "data", "--c", c, "--out", "eval"]);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("eval/report.json")).unwrap()).unwrap();
    assert!(report["mse"].as_f64().unwrap().is_finite());
    assert!(dir.join("eval/mse.csv").exists());
}

#[test]
fn roundtrip_burgers() {
    let d = tempfile::tempdir().unwrap();
    roundtrip(d.path(), &["--recipe", "burgers", "--n-points", "64", "--t-total", "2", "--coarse", "4"], "4");
}

#[test]
fn roundtrip_ks() {
    let d = tempfile::tempdir().unwrap();
    roundtrip(d.path(), &["--recipe", "ks", "--n-points", "64", "--t-total", "2"], "4");
}

#[test]
fn roundtrip_kdv() {
    let d = tempfile::tempdir().unwrap();
    roundtrip(d.path(), &["--recipe", "kdv", "--n-points", "64", "--t-total", "0.2"], "8");
}

#[test]
fn kdv_noise_learning_writes_estimate() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    ok(p, &["generate", "--recipe", "kdv", "--sigma", "0.3", "--n-points", "64", "--t-total", "0.2", "--out", "data"]);
    for f in ["noisy_c8.stn1", "noise_c8.stn1", "coarse_c8.stn1"] {
        assert!(p.join("data").join(f).exists(), "missing {f}");
    }
    ok(p, &["train", "--data", "data", "--noise", "learn", "--epochs", "2", "--q", "2", "--hidden", "8", "--out", "run"]);
    let est = stencilnet::format::read_trajectory(p.join("run/noise_estimate.stn1")).unwrap();
    let truth = stencilnet::format::read_trajectory(p.join("data/noise_c8.stn1")).unwrap();
    assert_eq!(est.n_steps(), truth.n_steps());
    assert_eq!(est.n_points(), truth.n_points());
    assert!(p.join("run/denoised.stn1").exists());

    ok(p, &["denoise", "--data", "data", "--epochs", "2", "--q", "2", "--hidden", "8", "--out", "dn"]);
    let rep: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(p.join("dn/denoise.json")).unwrap()).unwrap();
    assert!(rep["correlation"].is_number());
    assert_eq!(rep["hist_estimate"].as_array().unwrap().len(), 50);
}

#[test]
fn config_errors_exit_2() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    std::fs::write(p.join("neg.json"), r#"{"dataset": {"viscosity": -1.0}}"#).unwrap();
    assert_eq!(code(p, &["generate", "--config", "neg.json", "--out", "x"]).0, 2);
    assert!(!p.join("x").exists());
    std::fs::write(p.join("bad.json"), r#"{"recipe": "navier"}"#).unwrap();
    assert_eq!(code(p, &["generate", "--config", "bad.json", "--out", "x"]).0, 2);

    ok(p, &["generate", "--recipe", "burgers", "--n-points", "64", "--t-total", "2", "--coarse", "4", "--out", "data"]);
    // 13 coarse rows: q = 6 would need q < N_t / 2
    let (c, msg) = code(p, &["train", "--data", "data", "--c", "4", "--q", "6", "--out", "r"]);
    assert_eq!(c, 2, "{msg}");
    assert!(!p.join("r/model.stnm").exists());
    assert_eq!(code(p, &["train", "--data", "data", "--c", "3", "--out", "r"]).0, 2);
}

#[test]
fn missing_files_exit_4() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    assert_eq!(code(p, &["train", "--config", "nope.json", "--out", "r"]).0, 4);
    assert_eq!(code(p, &["train", "--data", "nope", "--c", "4", "--out", "r"]).0, 4);
}

#[test]
fn resolution_mismatch_is_refused() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    ok(p, &["generate", "--recipe", "burgers", "--n-points", "64", "--t-total", "2", "--coarse", "4", "--out", "data"]);
    let mut t = vec!["train", "--data", "data", "--c", "4", "--out", "run"];
    t.extend_from_slice(SMALL_NET);
    ok(p, &t);
    let (c, msg) = code(p, &["predict", "--model", "run/model.stnm", "--input", "data/fine.stn1", "--steps", "2", "--out", "p.stn1"]);
    assert_eq!(c, 2);
    assert!(msg.contains("resolution"), "{msg}");
    assert!(!p.join("p.stn1").exists());
}

#[test]
fn larger_domain_transfer_runs() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    std::fs::write(p.join("dt.json"), r#"{"dataset": {"coarse_dt": 0.16}}"#).unwrap();
    ok(p, &["generate", "--config", "dt.json", "--n-points", "64", "--t-total", "2", "--coarse", "4", "--out", "small"]);
    let mut t = vec!["train", "--data", "small", "--c", "4", "--out", "run"];
    t.extend_from_slice(SMALL_NET);
    ok(p, &t);
    let big_l = format!("{}", 4.0 * std::f64::consts::TAU);
    ok(p, &["generate", "--config", "dt.json", "--n-points", "256", "--length", &big_l, "--t-total", "2", "--coarse", "4", "--out", "big"]);
    ok(p, &["evaluate", "--model", "run/model.stnm", "--data", "big", "--c", "4", "--out", "eval"]);
    let pred = stencilnet::format::read_trajectory(p.join("eval/prediction.stn1")).unwrap();
    assert_eq!(pred.n_points(), 64);
}

#[test]
fn quick_training_is_under_a_minute() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    ok(p, &["generate", "--recipe", "burgers", "--out", "data"]);
    let t0 = Instant::now();
    ok(p, &["train", "--data", "data", "--c", "4", "--q", "1", "--epochs", "1", "--out", "run"]);
    let secs = t0.elapsed().as_secs_f64();
    assert!(secs < 60.0, "took {secs} s");
    let csv = std::fs::read_to_string(p.join("run/loss.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
}

#[test]
fn bench_writes_timing_table() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    ok(p, &["generate", "--recipe", "burgers", "--n-points", "64", "--t-total", "2", "--coarse", "4", "--out", "data"]);
    let mut t = vec!["train", "--data", "data", "--c", "4", "--out", "run"];
    t.extend_from_slice(SMALL_NET);
    ok(p, &t);
    ok(p, &["bench", "--model", "run/model.stnm", "--grid", "8192", "--reps", "10", "--warmup", "1", "--out", "b"]);
    let csv = std::fs::read_to_string(p.join("b/bench.csv")).unwrap();
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    for col in ["n_points", "t_s", "t_n", "ratio", "kappa"] {
        assert!(header.contains(&col), "missing column {col}");
    }
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().all(|r| r.starts_with("8192,")));
}

#[test]
fn commands_are_deterministic() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    for tag in ["a", "b"] {
        let data = format!("data_{tag}");
        let run_dir = format!("run_{tag}");
        ok(p, &["generate", "--recipe", "kdv", "--sigma", "0.3", "--n-points", "64", "--t-total", "0.2", "--seed", "7", "--out", &data]);
        ok(p, &["train", "--data", &data, "--noise", "learn", "--epochs", "3", "--q", "2", "--hidden", "8", "--seed", "7", "--out", &run_dir]);
    }
    for f in ["data/meta.json", "data/fine.stn1", "data/noisy_c8.stn1", "run/model.stnm", "run/loss.csv", "run/noise_estimate.stn1", "run/report.json"] {
        let (dir, name) = f.split_once('/').unwrap();
        let a = std::fs::read(p.join(format!("{dir}_a")).join(name)).unwrap();
        let b = std::fs::read(p.join(format!("{dir}_b")).join(name)).unwrap();
        assert!(a == b, "{f} differs between identical runs");
    }
}
