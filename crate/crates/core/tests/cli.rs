use std::fs;
use std::path::Path;
use std::process::{Command, Output};
use std::time::Instant;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sdeforecast")).args(args).env("RUST_LOG", "warn").output().expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn simulate_then_spm() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("gbm.csv");
    let out = run(&["simulate", "--model", "gbm", "--steps", "500", "--out", p(&csv), "--seed", "1"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let out_dir = dir.path().join("spm");
    let o = run(&["spm", "--input", p(&csv), "--window", "200", "--dt", "10", "--horizon", "10", "--out", p(&out_dir)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(out_dir.join("forecast_spm.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 11);
    assert!(lines[0].starts_with("step,feature,a,b,from_value,sample,mean"));
    assert!(lines[10].starts_with("10,value,"));
}

#[test]
fn missing_input_is_a_data_error_naming_the_path() {
    let o = run(&["spm", "--input", "missing.csv"]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert_eq!(err.trim().lines().count(), 1, "{err}");
    assert!(err.contains("missing.csv"), "{err}");
}

#[test]
fn usage_errors_and_help() {
    assert_eq!(run(&["spm", "--no-such-flag"]).status.code(), Some(1));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(run(&["spm", "--input", "x.csv", "--window", "2"]).status.code(), Some(1));

    let help = run(&["backtest", "--help"]);
    assert_eq!(help.status.code(), Some(0));
    let text = String::from_utf8_lossy(&help.stdout);
    for key in [
        "seed",
        "dt",
        "input",
        "output",
        "timestamp_column",
        "window.min",
        "window.base",
        "window.max",
        "window.threshold",
        "window.lookback",
        "mpm.particles",
        "mpm.sigma_mode",
        "mpm.horizon",
        "mpm.freeze_params",
        "mpm.feed",
        "spm.window",
        "spm.horizon",
        "spm.column",
        "spm.point",
        "spm.bounds.kind",
        "spm.bounds.confidence",
        "baseline.p_max",
        "baseline.d_max",
        "baseline.var_d",
        "baseline.train_fraction",
        "backtest.methods",
        "backtest.horizon",
        "backtest.stride",
        "backtest.first_origin",
        "backtest.max_origins",
    ] {
        assert!(text.contains(key), "help lacks {key}");
    }
}

#[test]
fn bad_config_file_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, "[mpm]\nparticle = 3\n").unwrap();
    let o = run(&["mpm", "--config", p(&cfg), "--input", "x.csv"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("particle"));
}

#[test]
fn mpm_backtest_end_to_end_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("engine.csv");
    let o = run(&["simulate", "--model", "linear", "--preset", "engine", "--steps", "1999", "--out", p(&csv)]);
    assert!(o.status.success());
    assert_eq!(fs::read_to_string(&csv).unwrap().lines().count(), 2001);

    // Same output directory both times, so the echoed config matches too.
    let out_dir = dir.path().join("out");
    let mut runs = Vec::new();
    for name in ["a", "b"] {
        let start = Instant::now();
        let o = run(&[
            "backtest",
            "--input",
            p(&csv),
            "--method",
            "mpm",
            "--horizon",
            "20",
            "--particles",
            "1000",
            "--stride",
            "10",
            "--out",
            p(&out_dir),
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        eprintln!("backtest run {name}: {:.2} s", start.elapsed().as_secs_f64());
        let snapshot = dir.path().join(name);
        fs::rename(&out_dir, &snapshot).unwrap();
        runs.push(snapshot);
    }
    for file in [
        "report_mpm-standard.json",
        "report_mpm-corrected.json",
        "comparison.csv",
        "comparison.json",
        "horizon_curves.csv",
    ] {
        let a = fs::read(runs[0].join(file)).unwrap();
        let b = fs::read(runs[1].join(file)).unwrap();
        assert_eq!(a, b, "{file} differs between runs");
    }

    let cmp = dir.path().join("cmp");
    let o = run(&[
        "compare",
        "--reports",
        p(&runs[0].join("report_mpm-standard.json")),
        p(&runs[0].join("report_mpm-corrected.json")),
        "--out",
        p(&cmp),
    ]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(fs::read(cmp.join("comparison.csv")).unwrap(), fs::read(runs[0].join("comparison.csv")).unwrap());
}

#[test]
fn simulate_linear_from_spec_file() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.toml");
    fs::write(
        &spec,
        "x0 = [0.0, 0.0]\ndrift = [1.0, -1.0]\ndiffusion = [[0.0, 0.0], [0.0, 0.0]]\nn_steps = 2\ndt = 1.0\n\
         feature_names = [\"u\", \"v\"]\n",
    )
    .unwrap();
    let csv = dir.path().join("lin.csv");
    let o = run(&["simulate", "--model", "linear", "--spec", p(&spec), "--out", p(&csv)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read_to_string(&csv).unwrap(), "u,v\n0.0,0.0\n1.0,-1.0\n2.0,-2.0\n");

    let o = run(&["mpm", "--input", p(&csv), "--out", p(dir.path())]);
    assert_eq!(o.status.code(), Some(2), "too short for the warm-up");
}
