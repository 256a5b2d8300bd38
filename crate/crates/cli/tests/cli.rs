use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

fn data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/data").join(name)
}

fn gridpq(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gridpq")).args(args).env_remove("GRIDPQ_OUT").output().unwrap()
}

fn short_config(dir: &Path, hours: usize) -> PathBuf {
    let text = std::fs::read_to_string(data("summer.toml"))
        .unwrap()
        .replace("hours = 24", &format!("hours = {hours}"));
    let path = dir.join(format!("short{hours}.toml"));
    // Relative paths in the config resolve against its own directory.
    for f in ["ieee13.toml", "solar_summer.csv", "residential_summer.csv", "commercial_summer.csv", "industrial_summer.csv"] {
        std::fs::copy(data(f), dir.join(f)).unwrap();
    }
    std::fs::write(&path, text).unwrap();
    path
}

fn digest(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), Sha256::digest(std::fs::read(e.path()).unwrap()).to_vec())
        })
        .collect();
    out.sort();
    out
}

#[test]
fn powerflow_prints_one_row_per_node() {
    let out = gridpq(&["powerflow", "--grid", data("ieee13.toml").to_str().unwrap()]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("node,v_pu,angle_deg"));
    assert_eq!(lines.count(), 26);
    assert!(text.contains("\n650.a,1.000000,0.0000\n"));
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(gridpq(&["powerflow", "--grid", "/definitely/missing.toml"]).status.code(), Some(2));
    assert_eq!(gridpq(&["powerflow", "--frobnicate"]).status.code(), Some(2));
    assert_eq!(gridpq(&["nonsense"]).status.code(), Some(2));
}

#[test]
fn failures_exit_with_one_and_a_diagnostic() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "name = \"x\"\n").unwrap();
    let out = gridpq(&["simulate", "--config", bad.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.starts_with("error:") && err.lines().count() == 1, "{err}");
}

#[test]
fn fit_then_forecast() {
    let dir = tempfile::tempdir().unwrap();
    let out = gridpq(&[
        "fit",
        "--series",
        data("solar_summer.csv").to_str().unwrap(),
        "--kind",
        "solar",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let model = dir.path().join("solar_07.toml");
    let out = gridpq(&["forecast", "--model", model.to_str().unwrap(), "--state", "10", "--hour", "2"]);
    assert!(out.status.success());
    let v: f64 = String::from_utf8(out.stdout).unwrap().trim().parse().unwrap();
    assert_eq!(v, 0.0, "night-time insolation has zero width");
}

#[test]
fn decompose_writes_signals() {
    let dir = tempfile::tempdir().unwrap();
    let series = data("solar_summer.csv");
    let out = gridpq(&[
        "decompose",
        "--forecast",
        series.to_str().unwrap(),
        "--measured",
        series.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("ess_capacity_kwh,"));
    let signals = std::fs::read_to_string(dir.path().join("signals.csv")).unwrap();
    assert_eq!(signals.lines().count(), 4 * 1440 + 1);
}

#[test]
fn simulate_is_reproducible_and_compare_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short_config(dir.path(), 2);
    let run = |mode: &str, out: &str| {
        let out_dir = dir.path().join(out);
        let o = gridpq(&[
            "simulate",
            "--config",
            cfg.to_str().unwrap(),
            "--mode",
            mode,
            "--seed",
            "7",
            "--out",
            out_dir.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        out_dir
    };
    let a1 = run("baseline", "a1");
    let a2 = run("baseline", "a2");
    let b = run("fast-control", "b");
    assert_eq!(digest(&a1), digest(&a2));
    for f in ["steps.csv", "voltages.csv", "summary.csv"] {
        assert!(b.join(f).exists());
    }

    let out = gridpq(&["compare", a1.to_str().unwrap(), b.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("IEEE 1547 standard") && text.contains("Fast inverter VAR control"));
    let csv = std::fs::read_to_string(dir.path().join("comparison.csv")).unwrap();
    assert!(csv.starts_with("metric,baseline,fast_control,delta\n"));

    let short = run_short(dir.path());
    let out = gridpq(&["compare", a1.to_str().unwrap(), short.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

fn run_short(dir: &Path) -> PathBuf {
    let cfg = short_config(dir, 1);
    let out_dir = dir.join("short");
    // The output directory can also come from the environment.
    let o = Command::new(env!("CARGO_BIN_EXE_gridpq"))
        .args(["simulate", "--config", cfg.to_str().unwrap()])
        .env("GRIDPQ_OUT", &out_dir)
        .output()
        .unwrap();
    assert!(o.status.success());
    out_dir
}
