//! Day-long two-timescale simulation of a feeder.
//!
//! A run fits Markov models to the historical profiles, draws one
//! realization of every load class and of the solar farm, and then steps
//! through the day: capacitor banks are re-planned every slow step, and
//! every fast step solves the fast control problem (or the unity power
//! factor baseline), runs the regulators' local rule and logs the metrics.
//!
//! Both modes consume exactly the same random draws for a given seed, so
//! any difference between a baseline and a controlled report is due to the
//! control alone.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use chrono::{Duration, NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::{
    self, ieee1547_baseline, in_band, regulator_step, solve_fast, solve_slow, ControlError,
    FastControlProblem, FlexMode, FlexibleLoad, Inverter, ProfitWeights, QualityMetrics,
};
use crate::grid::file::GridCase;
use crate::grid::{BusId, GridError};
use crate::markov::{self, Context, Label, MarkovError, MarkovModel, Sample, SolarModelSet, VariationRange};
use crate::powerflow::{LoadModel, Network, PowerFlowError, SolverOptions, ZipMix};
use crate::signal::{self, FilterWeights, SignalError};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Markov(#[from] MarkovError),
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error(transparent)]
    PowerFlow(#[from] PowerFlowError),
    #[error("step {step} ({time}): {source}")]
    Step {
        step: usize,
        time: String,
        source: ControlError,
        /// Everything logged before the failing step.
        partial: Box<RunReport>,
    },
    #[error("cannot compare: {0}")]
    Comparison(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

fn io_error(path: &Path, e: impl std::fmt::Display) -> ScenarioError {
    ScenarioError::Io { path: path.display().to_string(), message: e.to_string() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Inverters at unity power factor, flexible load at its reference.
    Baseline,
    #[default]
    FastControl,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Baseline => "baseline",
            Mode::FastControl => "fast_control",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            Mode::Baseline => "IEEE 1547 standard",
            Mode::FastControl => "Fast inverter VAR control",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "baseline" | "ieee1547" => Some(Mode::Baseline),
            "fast_control" | "fast" => Some(Mode::FastControl),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarkovConfig {
    #[serde(default = "ten")]
    pub solar_states: usize,
    #[serde(default = "ten")]
    pub load_states: usize,
}

fn ten() -> usize {
    10
}

impl Default for MarkovConfig {
    fn default() -> Self {
        MarkovConfig { solar_states: 10, load_states: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolarConfig {
    /// `timestamp,value` insolation history.
    pub history: PathBuf,
    /// Name of the generator in the grid file.
    pub generator: String,
    /// Output at the highest insolation in the fitted range, kW.
    pub peak_kw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlexibleConfig {
    pub bus: String,
    /// Load class whose share at `bus` is flexible.
    pub class: String,
    /// Fraction of that class's load at the bus that can be modulated.
    pub share: f64,
    #[serde(default = "unity")]
    pub power_factor: f64,
}

fn unity() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlConfig {
    /// Voltage-deviation weight on every load-serving node.
    #[serde(default = "unity")]
    pub alpha: f64,
    #[serde(default = "unity")]
    pub v_nom: f64,
    /// Half-width of the acceptable voltage band, p.u.
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default)]
    pub flex_mode: FlexModeConfig,
    /// Fraction of the forecast feeder reactive demand the banks should cover.
    #[serde(default = "unity")]
    pub capacitor_compensation: f64,
    /// Re-plan capacitor banks each slow step.
    #[serde(default = "yes")]
    pub slow_control: bool,
    #[serde(default)]
    pub weights: ProfitWeights,
    #[serde(default = "default_pf_tolerance")]
    pub powerflow_tolerance: f64,
}

fn default_tolerance() -> f64 {
    0.05
}

fn default_pf_tolerance() -> f64 {
    1e-8
}

fn yes() -> bool {
    true
}

impl Default for ControlConfig {
    fn default() -> Self {
        ControlConfig {
            alpha: 1.0,
            v_nom: 1.0,
            tolerance: 0.05,
            flex_mode: FlexModeConfig::MinimizeCost,
            capacitor_compensation: 1.0,
            slow_control: true,
            weights: ProfitWeights::default(),
            powerflow_tolerance: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FlexModeConfig {
    #[default]
    MinimizeCost,
    TrackSignal,
}

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    #[serde(default)]
    pub season: Option<String>,
    pub grid: PathBuf,
    /// Simulated calendar day; picks the load day type and solar month.
    pub date: NaiveDate,
    #[serde(default = "default_hours")]
    pub hours: usize,
    #[serde(default = "default_slow")]
    pub slow_step_minutes: usize,
    #[serde(default = "default_fast")]
    pub fast_step_minutes: usize,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub markov: MarkovConfig,
    #[serde(default)]
    pub solar: Option<SolarConfig>,
    /// Load class name → `timestamp,kW` history.
    #[serde(default)]
    pub profiles: std::collections::BTreeMap<String, PathBuf>,
    #[serde(default)]
    pub flexible: Option<FlexibleConfig>,
    #[serde(default)]
    pub control: ControlConfig,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_hours() -> usize {
    24
}

fn default_slow() -> usize {
    60
}

fn default_fast() -> usize {
    1
}

impl ScenarioConfig {
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self, ScenarioError> {
        let mut cfg: ScenarioConfig = toml::from_str(text).map_err(|e| ScenarioError::Config(e.to_string()))?;
        cfg.base_dir = base_dir.to_path_buf();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|e| io_error(path, e))?;
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml(&text, &dir).map_err(|e| match e {
            ScenarioError::Config(m) => ScenarioError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: String| Err(ScenarioError::Config(m));
        if self.fast_step_minutes == 0 || self.slow_step_minutes == 0 || self.hours == 0 {
            return bad("hours and step lengths must be positive".into());
        }
        if self.slow_step_minutes % self.fast_step_minutes != 0 {
            return bad(format!(
                "fast step ({} min) must divide the slow step ({} min)",
                self.fast_step_minutes, self.slow_step_minutes
            ));
        }
        if 60 % self.fast_step_minutes != 0 {
            return bad(format!("fast step ({} min) must divide an hour", self.fast_step_minutes));
        }
        if (self.hours * 60) % self.slow_step_minutes != 0 {
            return bad(format!("horizon ({} h) must be a multiple of the slow step", self.hours));
        }
        if let Some(f) = &self.flexible {
            if !(0.0..=1.0).contains(&f.share) || !(f.power_factor > 0.0 && f.power_factor <= 1.0) {
                return bad("flexible share must be in [0, 1] and power factor in (0, 1]".into());
            }
        }
        if let Some(s) = &self.solar {
            if !(s.peak_kw >= 0.0) {
                return bad("solar peak_kw must be non-negative".into());
            }
        }
        control::check_tolerance(self.control.tolerance).map_err(|e| ScenarioError::Config(e.to_string()))?;
        self.control.weights.validate().map_err(|e| ScenarioError::Config(e.to_string()))?;
        if !(self.control.alpha >= 0.0) {
            return bad("alpha must be non-negative".into());
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        self.hours * 60 / self.fast_step_minutes
    }

    pub fn start(&self) -> NaiveDateTime {
        self.date.and_hms_opt(0, 0, 0).expect("midnight exists")
    }
}

/// One fast step of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub timestamp: String,
    pub solar_kw: f64,
    pub solar_forecast_kw: f64,
    pub d_kw: f64,
    pub d_l_kw: f64,
    pub d_h_kw: f64,
    pub q_inverter_kvar: f64,
    pub p_flexible_kw: f64,
    pub load_kw: f64,
    pub substation_kw: f64,
    pub substation_kvar: f64,
    pub losses_kw: f64,
    pub cost: f64,
    /// Capacitor steps, space separated, in grid-file order.
    pub capacitors: String,
    /// Regulator taps after this step's regulator action.
    pub taps: String,
    pub tap_changes: u64,
    pub starfi_events: usize,
    /// Cumulative events per customer node.
    pub starfi: f64,
    pub buses_in_band: usize,
    pub lost_capacity_kw: f64,
    pub loss_reduction_kw: f64,
    pub profit: f64,
    /// Generation − load − losses − substation import, kW.
    pub balance_kw: f64,
    pub v_min: f64,
    pub v_max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub name: String,
    pub mode: Mode,
    pub seed: u64,
    pub fast_step_minutes: usize,
    pub node_labels: Vec<String>,
    /// Indices into `node_labels` of load-serving nodes.
    pub customer_nodes: Vec<usize>,
    /// Number of load-serving buses.
    pub customer_buses: usize,
    pub tolerance: f64,
    pub steps: Vec<StepRecord>,
    /// `voltages[t][n]`, p.u.
    pub voltages: Vec<Vec<f64>>,
}

/// Whole-run figures.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub mode: Mode,
    pub steps: usize,
    pub fast_step_minutes: usize,
    pub tap_changes: u64,
    pub losses_kwh: f64,
    pub substation_kwh: f64,
    pub starfi: f64,
    pub starfi_events: usize,
    pub v_min: f64,
    pub v_max: f64,
    /// Share of load-serving `(bus, phase, step)` samples inside the band.
    pub in_band_fraction: f64,
    pub average_profit: f64,
    pub slow_signal_kwh: f64,
    pub fast_signal_kwh: f64,
    pub ess_capacity_kwh: f64,
    pub ess_max_ramp_kw: f64,
}

impl RunReport {
    fn dt_hours(&self) -> f64 {
        self.fast_step_minutes as f64 / 60.0
    }

    pub fn summary(&self) -> RunSummary {
        let dt = self.dt_hours();
        let n = self.steps.len().max(1) as f64;
        let mut v_min = f64::INFINITY;
        let mut v_max = f64::NEG_INFINITY;
        let mut inside = 0usize;
        let mut total = 0usize;
        for row in &self.voltages {
            for &c in &self.customer_nodes {
                v_min = v_min.min(row[c]);
                v_max = v_max.max(row[c]);
                inside += usize::from(in_band(row[c], self.tolerance));
                total += 1;
            }
        }
        let d_l: Vec<f64> = self.steps.iter().map(|s| s.d_l_kw).collect();
        let d_h: Vec<f64> = self.steps.iter().map(|s| s.d_h_kw).collect();
        let slow = signal::signal_energy(&d_l, dt).map(|e| e.absolute_kwh).unwrap_or(0.0);
        let ess = signal::ess_capacity_for_signal(&d_h, dt).ok();
        let last = self.steps.last();
        RunSummary {
            mode: self.mode,
            steps: self.steps.len(),
            fast_step_minutes: self.fast_step_minutes,
            tap_changes: last.map_or(0, |s| s.tap_changes),
            losses_kwh: self.steps.iter().map(|s| s.losses_kw).sum::<f64>() * dt,
            substation_kwh: self.steps.iter().map(|s| s.substation_kw).sum::<f64>() * dt,
            starfi: last.map_or(0.0, |s| s.starfi),
            starfi_events: self.steps.iter().map(|s| s.starfi_events).sum(),
            v_min,
            v_max,
            in_band_fraction: if total == 0 { 1.0 } else { inside as f64 / total as f64 },
            average_profit: self.steps.iter().map(|s| s.profit).sum::<f64>() / n,
            slow_signal_kwh: slow,
            fast_signal_kwh: ess.map_or(0.0, |e| e.signal_energy_kwh),
            ess_capacity_kwh: ess.map_or(0.0, |e| e.capacity_kwh),
            ess_max_ramp_kw: ess.map_or(0.0, |e| e.max_ramp_kw),
        }
    }

    /// Writes `steps.csv`, `voltages.csv` and `summary.csv` into `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<(), ScenarioError> {
        std::fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
        let path = dir.join("steps.csv");
        let mut w = csv::Writer::from_path(&path).map_err(|e| io_error(&path, e))?;
        for s in &self.steps {
            w.serialize(s).map_err(|e| io_error(&path, e))?;
        }
        w.flush().map_err(|e| io_error(&path, e))?;

        let path = dir.join("voltages.csv");
        let mut w = csv::Writer::from_path(&path).map_err(|e| io_error(&path, e))?;
        let mut header = vec!["timestamp".to_string()];
        header.extend(self.node_labels.iter().cloned());
        w.write_record(&header).map_err(|e| io_error(&path, e))?;
        for (s, row) in self.steps.iter().zip(&self.voltages) {
            let mut rec = vec![s.timestamp.clone()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec).map_err(|e| io_error(&path, e))?;
        }
        w.flush().map_err(|e| io_error(&path, e))?;

        let path = dir.join("summary.csv");
        std::fs::write(&path, self.summary_csv()).map_err(|e| io_error(&path, e))
    }

    fn summary_csv(&self) -> String {
        let s = self.summary();
        let customers: Vec<&str> = self.customer_nodes.iter().map(|&c| self.node_labels[c].as_str()).collect();
        let mut out = String::from("metric,value\n");
        let rows: [(&str, String); 22] = [
            ("name", self.name.clone()),
            ("mode", self.mode.as_str().into()),
            ("seed", self.seed.to_string()),
            ("fast_step_minutes", self.fast_step_minutes.to_string()),
            ("tolerance", self.tolerance.to_string()),
            ("customer_buses", self.customer_buses.to_string()),
            ("customer_nodes", customers.join(" ")),
            ("steps", s.steps.to_string()),
            ("tap_changes", s.tap_changes.to_string()),
            ("losses_kwh", s.losses_kwh.to_string()),
            ("substation_kwh", s.substation_kwh.to_string()),
            ("starfi", s.starfi.to_string()),
            ("starfi_events", s.starfi_events.to_string()),
            ("v_min", s.v_min.to_string()),
            ("v_max", s.v_max.to_string()),
            ("in_band_fraction", s.in_band_fraction.to_string()),
            ("average_profit", s.average_profit.to_string()),
            ("slow_signal_kwh", s.slow_signal_kwh.to_string()),
            ("fast_signal_kwh", s.fast_signal_kwh.to_string()),
            ("ess_capacity_kwh", s.ess_capacity_kwh.to_string()),
            ("ess_max_ramp_kw", s.ess_max_ramp_kw.to_string()),
            ("version", env!("CARGO_PKG_VERSION").into()),
        ];
        for (k, v) in rows {
            let _ = writeln!(out, "{k},{v}");
        }
        out
    }

    /// Reads a report written by [`RunReport::write_dir`].
    pub fn read_dir(dir: &Path) -> Result<Self, ScenarioError> {
        let path = dir.join("summary.csv");
        let text = std::fs::read_to_string(&path).map_err(|e| io_error(&path, e))?;
        let mut meta = std::collections::BTreeMap::new();
        for line in text.lines().skip(1) {
            if let Some((k, v)) = line.split_once(',') {
                meta.insert(k.to_string(), v.to_string());
            }
        }
        let get = |k: &str| meta.get(k).cloned().ok_or_else(|| io_error(&path, format!("missing {k}")));
        let num = |k: &str| -> Result<f64, ScenarioError> {
            get(k)?.parse::<f64>().map_err(|e| io_error(&path, format!("{k}: {e}")))
        };
        let mode = Mode::parse(&get("mode")?).ok_or_else(|| io_error(&path, "unknown mode"))?;

        let vpath = dir.join("voltages.csv");
        let mut rdr = csv::Reader::from_path(&vpath).map_err(|e| io_error(&vpath, e))?;
        let node_labels: Vec<String> =
            rdr.headers().map_err(|e| io_error(&vpath, e))?.iter().skip(1).map(str::to_string).collect();
        let mut voltages = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| io_error(&vpath, e))?;
            let row: Result<Vec<f64>, _> = rec.iter().skip(1).map(str::parse::<f64>).collect();
            voltages.push(row.map_err(|e| io_error(&vpath, e))?);
        }
        let customer_nodes = get("customer_nodes")?
            .split_whitespace()
            .map(|l| node_labels.iter().position(|n| n == l).ok_or_else(|| io_error(&path, format!("unknown node {l}"))))
            .collect::<Result<Vec<usize>, _>>()?;

        let spath = dir.join("steps.csv");
        let mut rdr = csv::Reader::from_path(&spath).map_err(|e| io_error(&spath, e))?;
        let steps = rdr
            .deserialize()
            .collect::<Result<Vec<StepRecord>, _>>()
            .map_err(|e| io_error(&spath, e))?;
        Ok(RunReport {
            name: get("name")?,
            mode,
            seed: num("seed")? as u64,
            fast_step_minutes: num("fast_step_minutes")? as usize,
            node_labels,
            customer_nodes,
            customer_buses: num("customer_buses")? as usize,
            tolerance: num("tolerance")?,
            steps,
            voltages,
        })
    }
}

/// Side-by-side figures of two runs over the same horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub a: RunSummary,
    pub b: RunSummary,
}

pub fn compare(a: &RunReport, b: &RunReport) -> Result<Comparison, ScenarioError> {
    if a.steps.len() != b.steps.len() || a.fast_step_minutes != b.fast_step_minutes {
        return Err(ScenarioError::Comparison(format!(
            "horizons differ: {} × {} min vs {} × {} min",
            a.steps.len(),
            a.fast_step_minutes,
            b.steps.len(),
            b.fast_step_minutes
        )));
    }
    if a.steps.first().map(|s| &s.timestamp) != b.steps.first().map(|s| &s.timestamp) {
        return Err(ScenarioError::Comparison("runs start at different times".into()));
    }
    Ok(Comparison { a: a.summary(), b: b.summary() })
}

impl Comparison {
    /// `(metric, a, b, b − a)` rows.
    pub fn rows(&self) -> Vec<(&'static str, f64, f64, f64)> {
        let (a, b) = (&self.a, &self.b);
        let pairs = [
            ("tap_changes", a.tap_changes as f64, b.tap_changes as f64),
            ("losses_kwh", a.losses_kwh, b.losses_kwh),
            ("substation_kwh", a.substation_kwh, b.substation_kwh),
            ("starfi", a.starfi, b.starfi),
            ("starfi_events", a.starfi_events as f64, b.starfi_events as f64),
            ("v_min", a.v_min, b.v_min),
            ("v_max", a.v_max, b.v_max),
            ("in_band_fraction", a.in_band_fraction, b.in_band_fraction),
            ("average_profit", a.average_profit, b.average_profit),
        ];
        pairs.iter().map(|&(k, x, y)| (k, x, y, y - x)).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("metric,{},{},delta\n", self.a.mode.as_str(), self.b.mode.as_str());
        for (k, x, y, d) in self.rows() {
            let _ = writeln!(out, "{k},{x},{y},{d}");
        }
        out
    }

    /// The tap-change totals as a two-column table.
    pub fn tap_table(&self) -> String {
        let (ta, tb) = (self.a.mode.title(), self.b.mode.title());
        let (wa, wb) = (ta.len().max(6), tb.len().max(6));
        let rule = format!("+{}+{}+", "-".repeat(wa + 2), "-".repeat(wb + 2));
        format!(
            "Transformer tap changes\n{rule}\n| {ta:^wa$} | {tb:^wb$} |\n{rule}\n| {:^wa$} | {:^wb$} |\n{rule}\n",
            self.a.tap_changes, self.b.tap_changes
        )
    }

    pub fn to_table(&self) -> String {
        let mut out = format!("{:<18} {:>16} {:>16} {:>14}\n", "metric", self.a.mode.as_str(), self.b.mode.as_str(), "delta");
        for (k, x, y, d) in self.rows() {
            let _ = writeln!(out, "{k:<18} {x:>16.6} {y:>16.6} {d:>14.6}");
        }
        out
    }
}

/// Per-class Markov realizations, scaled so the class's fitted peak is 1.
struct ClassProfile {
    factor: Vec<f64>,
    model: MarkovModel,
    range: VariationRange,
    states: Vec<usize>,
    peak: f64,
}

impl ClassProfile {
    fn forecast_factor(&self, step: usize, k: usize, target_hour: usize) -> f64 {
        self.model.forecast(&self.range, self.states[step], k, target_hour).map_or(1.0, |v| v / self.peak)
    }
}

fn fit_load(history: &[Sample], n: usize, date: NaiveDateTime) -> Result<(MarkovModel, VariationRange), MarkovError> {
    // Prefer the day's own context; fall back to the month, then anything.
    let month = Context::Month { month: chrono::Datelike::month(&date) };
    for ctx in [Context::of(Label::Load, date), month, Context::Any] {
        match MarkovModel::fit(history, n, Label::Load, ctx) {
            Err(MarkovError::EmptySeries) => continue,
            other => return other,
        }
    }
    Err(MarkovError::EmptySeries)
}

/// Upper bound on regulator moves while settling the opening state.
const SETTLE_LIMIT: usize = 64;

fn seed_for(seed: u64, stream: u64) -> u64 {
    seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn initial_state(history: &[Sample], range: &VariationRange, n: usize) -> usize {
    history.first().map_or(n, |s| range.level_of(0, n, s.value))
}

/// Draws every stochastic input of a run.
struct Realization {
    classes: std::collections::BTreeMap<String, ClassProfile>,
    solar_kw: Vec<f64>,
    solar_forecast_kw: Vec<f64>,
}

fn realize(cfg: &ScenarioConfig) -> Result<Realization, ScenarioError> {
    let steps = cfg.steps();
    let per_hour = 60 / cfg.fast_step_minutes;
    let start = cfg.start();
    let mut classes = std::collections::BTreeMap::new();
    for (k, (class, path)) in cfg.profiles.iter().enumerate() {
        let history = markov::read_series(&cfg.resolve(path))?;
        let n = cfg.markov.load_states;
        let (model, range) = fit_load(&history, n, start)?;
        let init = initial_state(&history, &range, n);
        let traj = model.simulate(&range, init, cfg.hours, per_hour, seed_for(cfg.seed, k as u64 + 1))?;
        let peak = range.max.iter().copied().fold(0.0, f64::max);
        if !(peak > 0.0) {
            return Err(ScenarioError::Config(format!("profile {class} has no positive values")));
        }
        let factor = traj.values.iter().map(|v| v / peak).collect();
        classes.insert(class.clone(), ClassProfile { factor, model, range, states: traj.states, peak });
    }

    let (mut solar_kw, mut solar_forecast_kw) = (vec![0.0; steps], vec![0.0; steps]);
    if let Some(s) = &cfg.solar {
        let history = markov::read_series(&cfg.resolve(&s.history))?;
        let set = SolarModelSet::fit(&history, cfg.markov.solar_states)?;
        let month = chrono::Datelike::month(&start);
        let fitted = set
            .month(month)
            .ok_or_else(|| ScenarioError::Config(format!("solar history has no data for month {month}")))?;
        let n = fitted.model.n_states;
        let traj = fitted.model.simulate(&fitted.range, n, cfg.hours, per_hour, seed_for(cfg.seed, 0))?;
        let peak = fitted.range.max.iter().copied().fold(0.0, f64::max);
        let scale = if peak > 0.0 { s.peak_kw / peak } else { 0.0 };
        solar_kw = traj.values.iter().map(|v| v * scale).collect();
        // One-step-ahead forecast made at t−1 for t; the first sample has no past.
        solar_forecast_kw[0] = solar_kw[0];
        for t in 1..steps {
            solar_forecast_kw[t] = fitted.model.forecast(&fitted.range, traj.states[t - 1], 1, traj.hour_of(t))? * scale;
        }
    }
    Ok(Realization { classes, solar_kw, solar_forecast_kw })
}

/// Runs the scenario in `config.mode`.
pub fn run(config: &ScenarioConfig) -> Result<RunReport, ScenarioError> {
    config.validate()?;
    let case = GridCase::from_path(config.resolve(&config.grid))?;
    let grid = &case.grid;
    let real = realize(config)?;
    let steps = config.steps();
    let per_slow = config.slow_step_minutes / config.fast_step_minutes;
    let per_hour = 60 / config.fast_step_minutes;
    let dt = Duration::minutes(config.fast_step_minutes as i64);
    let start = config.start();
    let base_kw = grid.phase_base_kw();

    // Difference signal of the solar forecast and its slow/fast split.
    let d = signal::difference_signal(&real.solar_forecast_kw, &real.solar_kw)?;
    let parts = signal::split(&d, &FilterWeights::sigmoid());

    let inverter_spec = match &config.solar {
        Some(s) => Some(
            grid.generators
                .iter()
                .find(|g| g.name == s.generator)
                .ok_or_else(|| ScenarioError::Config(format!("no generator named {}", s.generator)))?
                .clone(),
        ),
        None => None,
    };

    // Split the flexible share off its loads.
    let mut fixed_loads = case.loads.clone();
    let mut flexible = None;
    if let Some(f) = &config.flexible {
        let bus = grid
            .bus_by_name(&f.bus)
            .ok_or_else(|| ScenarioError::Config(format!("flexible bus {} not in grid", f.bus)))?
            .id;
        let profile = real
            .classes
            .get(&f.class)
            .ok_or_else(|| ScenarioError::Config(format!("flexible class {} has no profile", f.class)))?;
        let mut nominal = 0.0;
        for l in fixed_loads.iter_mut().filter(|l| l.bus == bus && l.class.as_deref() == Some(f.class.as_str())) {
            nominal += l.p_nom * f.share;
            *l = l.scaled(1.0 - f.share);
        }
        let env = profile.model.clone().with_label(Label::Load, Context::Any).flexible_envelope(&profile.range)?;
        flexible = Some((bus, nominal, env, profile.peak, f.power_factor));
    }

    let mut customer_buses: Vec<BusId> = case.loads.iter().map(|l| l.bus).collect();
    customer_buses.sort();
    customer_buses.dedup();

    let mut s = grid.controller_state();
    let options = SolverOptions { tolerance: config.control.powerflow_tolerance, max_iterations: 30, flat_start: false };
    let mut network = Network::new(grid, &s)?;
    // Load-serving nodes are the (bus, phase) pairs that carry load.
    let flex_bus = flexible.as_ref().map(|f| f.0);
    let customer_nodes: Vec<usize> = network
        .nodes()
        .iter()
        .filter(|(_, b, p)| Some(*b) == flex_bus || case.loads.iter().any(|l| l.bus == *b && l.phase == *p))
        .map(|(i, _, _)| i)
        .collect();
    let mut alpha = vec![0.0; network.nodes().len()];
    for &c in &customer_nodes {
        alpha[c] = config.control.alpha;
    }
    let node_labels: Vec<String> = (0..network.nodes().len()).map(|i| network.label(i)).collect();

    let mut report = RunReport {
        name: config.name.clone(),
        mode: config.mode,
        seed: config.seed,
        fast_step_minutes: config.fast_step_minutes,
        node_labels,
        customer_nodes: customer_nodes.clone(),
        customer_buses: customer_buses.len(),
        tolerance: config.control.tolerance,
        steps: Vec::with_capacity(steps),
        voltages: Vec::with_capacity(steps),
    };

    let factor_of = |l: &LoadModel, t: usize| {
        l.class.as_ref().and_then(|c| real.classes.get(c)).map_or(1.0, |p| p.factor[t])
    };
    let mut warm = None;
    let mut tap_changes = 0u64;
    let mut events_total = 0usize;

    for t in 0..steps {
        let hour = t / per_hour;
        let time = start + dt * t as i32;
        if t % per_slow == 0 && config.control.slow_control && !grid.capacitors.is_empty() {
            // Reactive demand forecast for the middle of the coming slow step.
            let k = per_slow / 2;
            let target_hour = (t + k) / per_hour;
            let mut q = 0.0;
            for l in &case.loads {
                let f = l
                    .class
                    .as_ref()
                    .and_then(|c| real.classes.get(c))
                    .map_or(1.0, |p| p.forecast_factor(t, k, target_hour));
                q += l.q_nom * f;
            }
            let steps_now = solve_slow(
                q * config.control.capacitor_compensation,
                &grid.capacitors,
                &s.capacitor_steps,
                base_kw,
            )
            .map_err(|e| ScenarioError::Config(e.to_string()))?;
            s.capacitor_steps = steps_now;
        }
        let loads: Vec<LoadModel> = fixed_loads.iter().map(|l| l.scaled(factor_of(l, t))).collect();
        let inverters: Vec<Inverter> = inverter_spec
            .iter()
            .map(|g| Inverter { bus: g.bus, apparent_kva: g.apparent_limit_kva, p_kw: real.solar_kw[t] })
            .collect();
        let flex: Vec<FlexibleLoad> = flexible
            .iter()
            .map(|(bus, nominal, env, peak, pf)| {
                let (lo, hi) = env.bounds(hour);
                let class_factor = real.classes[&config.flexible.as_ref().expect("set").class].factor[t];
                FlexibleLoad {
                    bus: *bus,
                    p_min: nominal * lo / peak,
                    p_max: nominal * hi / peak,
                    // Absorb the slow part of the solar forecast error.
                    p_ref: nominal * class_factor - parts.d_l[t],
                    tan_phi: (1.0 - pf * pf).sqrt() / pf,
                    mix: ZipMix::constant_power(),
                }
            })
            .collect();
        let fail = |source: ControlError, report: &RunReport| ScenarioError::Step {
            step: t,
            time: time.to_string(),
            source,
            partial: Box::new(report.clone()),
        };
        let mode = match config.control.flex_mode {
            FlexModeConfig::MinimizeCost => FlexMode::MinimizeCost,
            FlexModeConfig::TrackSignal => FlexMode::TrackSignal,
        };
        if t == 0 {
            // Let the regulators settle on the opening operating point (at
            // unity power factor, so both modes start alike) without
            // counting those moves.
            for _ in 0..SETTLE_LIMIT {
                if network.state != s {
                    network = Network::new(grid, &s)?;
                }
                let problem = FastControlProblem {
                    network: &network,
                    loads: &loads,
                    inverters: inverters.clone(),
                    flexible: flex.clone(),
                    alpha: alpha.clone(),
                    v_nom: config.control.v_nom,
                    mode,
                    options,
                    start: warm.clone(),
                };
                let opening = ieee1547_baseline(&problem).map_err(|e| fail(e, &report))?;
                let moved = regulator_step(&opening.solution.state, &network, &mut s);
                warm = Some(opening.solution.state);
                if moved == 0 {
                    break;
                }
            }
        }
        if network.state != s {
            network = Network::new(grid, &s)?;
        }
        let problem = FastControlProblem {
            network: &network,
            loads: &loads,
            inverters,
            flexible: flex,
            alpha: alpha.clone(),
            v_nom: config.control.v_nom,
            mode,
            options,
            start: warm.clone(),
        };
        let baseline = ieee1547_baseline(&problem).map_err(|e| fail(e, &report))?;
        let decision = match config.mode {
            Mode::Baseline => baseline.clone(),
            Mode::FastControl => solve_fast(&problem).map_err(|e| fail(e, &report))?,
        };
        let state = &decision.solution.state;

        let mut all_loads = loads.clone();
        for (f, p) in problem.flexible.iter().zip(&decision.p_flexible) {
            all_loads.extend(f.models(&network, *p));
        }
        let load_kw = network.total_load_kw(state, &all_loads)?;
        let gen_kw: f64 = problem.inverters.iter().map(Inverter::p_out).sum();
        let balance_kw = decision.solution.slack_kw + gen_kw - load_kw - decision.losses_kw;

        let voltages: Vec<f64> = state.v.clone();
        let events = customer_nodes.iter().filter(|&&c| !in_band(voltages[c], config.control.tolerance)).count();
        events_total += events;
        let buses_in_band = customer_buses
            .iter()
            .filter(|b| {
                network
                    .nodes()
                    .iter()
                    .filter(|(i, nb, _)| nb == *b && customer_nodes.contains(i))
                    .all(|(i, _, _)| in_band(voltages[i], config.control.tolerance))
            })
            .count();
        let metrics = QualityMetrics {
            starfi: events as f64 / customer_nodes.len().max(1) as f64,
            tap_changes,
            losses_kwh: 0.0,
            lost_capacity_kw: baseline.solution.slack_kw - decision.solution.slack_kw,
            loss_reduction_kw: baseline.losses_kw - decision.losses_kw,
        };
        let profit = control::profit(&metrics, &config.control.weights);

        tap_changes += regulator_step(state, &network, &mut s) as u64;
        let (v_min, v_max) = voltages.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(*v), hi.max(*v)));
        report.steps.push(StepRecord {
            timestamp: time.format("%Y-%m-%d %H:%M").to_string(),
            solar_kw: real.solar_kw[t],
            solar_forecast_kw: real.solar_forecast_kw[t],
            d_kw: parts.d[t],
            d_l_kw: parts.d_l[t],
            d_h_kw: parts.d_h[t],
            q_inverter_kvar: decision.q_inverter.iter().sum(),
            p_flexible_kw: decision.p_flexible.iter().sum(),
            load_kw,
            substation_kw: decision.solution.slack_kw,
            substation_kvar: decision.solution.slack_kvar,
            losses_kw: decision.losses_kw,
            cost: decision.cost,
            capacitors: join(&decision.s.capacitor_steps),
            taps: join(&s.regulator_taps),
            tap_changes,
            starfi_events: events,
            starfi: events_total as f64 / customer_nodes.len().max(1) as f64,
            buses_in_band,
            lost_capacity_kw: metrics.lost_capacity_kw,
            loss_reduction_kw: metrics.loss_reduction_kw,
            profit,
            balance_kw,
            v_min,
            v_max,
        });
        report.voltages.push(voltages);
        warm = Some(decision.solution.state);
    }
    Ok(report)
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(" ")
}

/// Runs the scenario and writes the report into `dir`, flushing whatever
/// was logged when a step fails.
pub fn run_to_dir(config: &ScenarioConfig, dir: &Path) -> Result<RunReport, ScenarioError> {
    match run(config) {
        Ok(report) => {
            report.write_dir(dir)?;
            Ok(report)
        }
        Err(ScenarioError::Step { step, time, source, partial }) => {
            partial.write_dir(dir)?;
            Err(ScenarioError::Step { step, time, source, partial })
        }
        Err(e) => Err(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn data_dir() -> PathBuf {
        PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data")
    }

    fn minimal(hours: usize, mode: Mode) -> ScenarioConfig {
        let text = format!(
            "name = \"t\"\ngrid = \"ieee13.toml\"\ndate = \"2024-07-16\"\nhours = {hours}\nmode = \"{}\"\n",
            mode.as_str()
        );
        ScenarioConfig::from_toml(&text, &data_dir()).unwrap()
    }

    #[test]
    fn config_validation() {
        let mut c = minimal(1, Mode::Baseline);
        c.fast_step_minutes = 7;
        assert!(c.validate().is_err());
        let mut c = minimal(1, Mode::Baseline);
        c.slow_step_minutes = 45;
        c.fast_step_minutes = 15;
        c.hours = 1;
        assert!(c.validate().is_err());
        assert!(ScenarioConfig::from_toml("name = \"x\"\ngrid = \"g\"\ndate = \"2024-01-01\"\nbogus = 1\n", Path::new(".")).is_err());
    }

    #[test]
    fn control_free_hour_is_a_sequence_of_plain_solves() {
        let cfg = minimal(1, Mode::Baseline);
        let report = run(&cfg).unwrap();
        assert_eq!(report.steps.len(), 60);

        let case = GridCase::from_path(data_dir().join("ieee13.toml")).unwrap();
        let mut s = case.grid.controller_state();
        let q: f64 = case.loads.iter().map(|l| l.q_nom).sum();
        s.capacitor_steps = solve_slow(q, &case.grid.capacitors, &s.capacitor_steps, case.grid.phase_base_kw()).unwrap();
        let opts = SolverOptions { tolerance: 1e-8, max_iterations: 30, flat_start: false };
        let mut warm = None;
        loop {
            let net = Network::new(&case.grid, &s).unwrap();
            let sol = net.solve(&case.loads, &[], &opts, warm.as_ref()).unwrap();
            let moved = regulator_step(&sol.state, &net, &mut s);
            warm = Some(sol.state);
            if moved == 0 {
                break;
            }
        }
        for (t, row) in report.voltages.iter().enumerate() {
            let net = Network::new(&case.grid, &s).unwrap();
            let sol = net.solve(&case.loads, &[], &opts, warm.as_ref()).unwrap();
            assert_eq!(&sol.state.v, row, "step {t}");
            regulator_step(&sol.state, &net, &mut s);
            warm = Some(sol.state);
        }
        assert!(report.steps.iter().all(|r| r.q_inverter_kvar == 0.0 && r.profit <= 0.0));
    }

    #[test]
    fn reports_round_trip_through_csv() {
        let report = run(&minimal(1, Mode::FastControl)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        report.write_dir(dir.path()).unwrap();
        let back = RunReport::read_dir(dir.path()).unwrap();
        assert_eq!(back, report);
        let cmp = compare(&report, &back).unwrap();
        assert!(cmp.rows().iter().all(|r| r.3 == 0.0));
    }

    #[test]
    fn comparison_requires_matching_horizons() {
        let a = run(&minimal(1, Mode::Baseline)).unwrap();
        let mut b = a.clone();
        b.steps.pop();
        assert!(matches!(compare(&a, &b), Err(ScenarioError::Comparison(_))));
    }

    #[test]
    fn tap_table_has_two_columns() {
        let a = run(&minimal(1, Mode::Baseline)).unwrap();
        let mut b = a.clone();
        b.mode = Mode::FastControl;
        let table = compare(&a, &b).unwrap().tap_table();
        let lines: Vec<&str> = table.lines().collect();
        assert!(lines[2].contains("IEEE 1547 standard") && lines[2].contains("Fast inverter VAR control"));
        assert_eq!(lines[4].matches('|').count(), 3);
    }
}
