use std::path::{Path, PathBuf};

use gridpq::grid::file::GridCase;
use gridpq::scenario::{self, Mode, RunReport, ScenarioConfig, ScenarioError};
use sha2::{Digest, Sha256};

fn config(hours: usize, mode: Mode) -> ScenarioConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data/summer.toml");
    let mut cfg = ScenarioConfig::load(&path).unwrap();
    cfg.hours = hours;
    cfg.mode = mode;
    cfg
}

fn hashes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = ["steps.csv", "voltages.csv", "summary.csv"]
        .iter()
        .map(|f| (f.to_string(), Sha256::digest(std::fs::read(dir.join(f)).unwrap()).to_vec()))
        .collect();
    out.sort();
    out
}

#[test]
fn repeated_runs_are_hash_identical() {
    let cfg = config(3, Mode::FastControl);
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    scenario::run_to_dir(&cfg, a.path()).unwrap();
    scenario::run_to_dir(&cfg, b.path()).unwrap();
    assert_eq!(hashes(a.path()), hashes(b.path()));
}

#[test]
fn every_step_conserves_power_and_counters_are_monotone() {
    let cfg = config(12, Mode::FastControl);
    let report = scenario::run(&cfg).unwrap();
    let base = GridCase::from_path(cfg.resolve(&cfg.grid)).unwrap().grid.phase_base_kw();
    assert_eq!(report.steps.len(), 12 * 60);
    assert_eq!(report.voltages.len(), report.steps.len());
    for w in report.steps.windows(2) {
        assert!(w[1].tap_changes >= w[0].tap_changes);
        assert!(w[1].starfi >= w[0].starfi);
    }
    for s in &report.steps {
        assert!(s.balance_kw.abs() / base <= 10.0 * cfg.control.powerflow_tolerance, "{}: {}", s.timestamp, s.balance_kw);
        assert!(s.q_inverter_kvar.powi(2) + s.solar_kw.min(120.0).powi(2) <= 120.0f64.powi(2) + 1e-9);
        assert!((s.d_l_kw + s.d_h_kw - s.d_kw).abs() <= 1e-9 * s.d_kw.abs().max(1.0));
    }
}

#[test]
fn both_modes_see_the_same_weather_and_demand() {
    let a = scenario::run(&config(4, Mode::Baseline)).unwrap();
    let b = scenario::run(&config(4, Mode::FastControl)).unwrap();
    for (x, y) in a.steps.iter().zip(&b.steps) {
        assert_eq!(x.timestamp, y.timestamp);
        assert_eq!(x.solar_kw, y.solar_kw);
        assert_eq!(x.solar_forecast_kw, y.solar_forecast_kw);
        assert_eq!(x.capacitors, y.capacitors);
    }
    // Baseline inverters stay at unity power factor.
    assert!(a.steps.iter().all(|s| s.q_inverter_kvar == 0.0));
    let cmp = scenario::compare(&a, &b).unwrap();
    assert!(cmp.b.losses_kwh < cmp.a.losses_kwh);
}

#[test]
fn solver_failure_flushes_a_partial_report() {
    let mut cfg = config(1, Mode::FastControl);
    cfg.control.powerflow_tolerance = 1e-300;
    let dir = tempfile::tempdir().unwrap();
    match scenario::run_to_dir(&cfg, dir.path()) {
        Err(ScenarioError::Step { step, partial, .. }) => {
            assert_eq!(step, 0);
            assert!(partial.steps.is_empty());
        }
        other => panic!("expected a step error, got {other:?}"),
    }
    let back = RunReport::read_dir(dir.path()).unwrap();
    assert!(back.steps.is_empty());
}
