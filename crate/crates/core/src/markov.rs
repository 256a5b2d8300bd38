//! Finite-state Markov chains for solar insolation and load profiles.
//!
//! Each hour of the day has its own physical range `[min, max]`, split into
//! `N` equal-width levels. Level 1 is the *top* of the range and level `N`
//! the bottom, so a state index says "how far below the hour's maximum" the
//! sample is. A single transition matrix is shared by every hour of a
//! context (a month for solar, a day type and month for load).
//!
//! ```
//! use gridpq::markov::{MarkovModel, VariationRange};
//!
//! let model = MarkovModel::from_matrix(vec![vec![0.9, 0.1], vec![0.2, 0.8]]).unwrap();
//! let range = VariationRange::constant(0.0, 100.0);
//! // Level 1 of [0, 100] with two levels is [50, 100]; its midpoint is 75.
//! assert_eq!(model.forecast(&range, 1, 0, 12).unwrap(), 75.0);
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use chrono::{Datelike, NaiveDate, NaiveDateTime, Timelike};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const HOURS: usize = 24;

#[derive(Debug, Error)]
pub enum MarkovError {
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("series is empty")]
    EmptySeries,
    #[error("no observation for hour {0}")]
    MissingHour(usize),
    #[error("state {state} outside 1..={n}")]
    State { state: usize, n: usize },
    #[error("expected a {expected} model, got {got}")]
    Label { expected: Label, got: Label },
    #[error("{path}: {message}")]
    Input { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Solar,
    Load,
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Solar => "solar",
            Label::Load => "load",
        })
    }
}

/// What slice of the calendar a model was fit on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Context {
    Month { month: u32 },
    DayType { weekday: bool, month: u32 },
    /// Fit on whatever the caller supplied.
    Any,
}

impl Context {
    pub fn of(label: Label, t: NaiveDateTime) -> Self {
        match label {
            Label::Solar => Context::Month { month: t.month() },
            Label::Load => Context::DayType { weekday: t.weekday().num_days_from_monday() < 5, month: t.month() },
        }
    }

    fn matches(&self, t: NaiveDateTime) -> bool {
        match *self {
            Context::Month { month } => t.month() == month,
            Context::DayType { weekday, month } => {
                t.month() == month && (t.weekday().num_days_from_monday() < 5) == weekday
            }
            Context::Any => true,
        }
    }
}

/// One observation of a historical series.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub time: NaiveDateTime,
    pub value: f64,
}

/// Per-hour `(min, max)` of the physical quantity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariationRange {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl VariationRange {
    /// Same range at every hour.
    pub fn constant(min: f64, max: f64) -> Self {
        VariationRange { min: vec![min; HOURS], max: vec![max; HOURS] }
    }

    pub fn validate(&self) -> Result<(), MarkovError> {
        if self.min.len() != HOURS || self.max.len() != HOURS {
            return Err(MarkovError::Parameter(format!(
                "range needs {HOURS} hourly entries, got {}/{}",
                self.min.len(),
                self.max.len()
            )));
        }
        for h in 0..HOURS {
            if !(self.min[h] <= self.max[h]) {
                return Err(MarkovError::Parameter(format!("hour {h}: min {} > max {}", self.min[h], self.max[h])));
            }
        }
        Ok(())
    }

    pub fn width(&self, hour: usize) -> f64 {
        self.max[hour % HOURS] - self.min[hour % HOURS]
    }

    /// `[lo, hi]` of level `state` (1 = top) at `hour`.
    pub fn level_bounds(&self, hour: usize, n: usize, state: usize) -> (f64, f64) {
        let h = hour % HOURS;
        let w = self.width(h) / n as f64;
        let lo = self.min[h] + (n - state) as f64 * w;
        (lo, lo + w)
    }

    /// Level of `value` at `hour`; values at a boundary go to the upper level.
    /// A zero-width hour maps everything to level `n`.
    pub fn level_of(&self, hour: usize, n: usize, value: f64) -> usize {
        let h = hour % HOURS;
        let width = self.width(h);
        if !(width > 0.0) {
            return n;
        }
        let k = ((value - self.min[h]) / (width / n as f64)).floor();
        let k = if k.is_finite() { k.clamp(0.0, (n - 1) as f64) as usize } else { 0 };
        n - k
    }

    fn value_at(&self, hour: usize, n: usize, expected_state: f64) -> f64 {
        let h = hour % HOURS;
        self.min[h] + self.width(h) / n as f64 * (n as f64 - expected_state + 0.5)
    }
}

/// Transition matrix `Π` with `Π[i][j] = Pr{X_{t+1} = j+1 | X_t = i+1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkovModel {
    pub n_states: usize,
    pub transition: Vec<Vec<f64>>,
    pub label: Label,
    pub context: Context,
}

impl MarkovModel {
    /// A context-free solar model around a given matrix; see [`MarkovModel::with_label`].
    pub fn from_matrix(transition: Vec<Vec<f64>>) -> Result<Self, MarkovError> {
        let model = MarkovModel { n_states: transition.len(), transition, label: Label::Solar, context: Context::Any };
        model.validate()?;
        Ok(model)
    }

    pub fn with_label(mut self, label: Label, context: Context) -> Self {
        self.label = label;
        self.context = context;
        self
    }

    pub fn validate(&self) -> Result<(), MarkovError> {
        let n = self.n_states;
        if n < 2 {
            return Err(MarkovError::Parameter(format!("need at least 2 states, got {n}")));
        }
        if self.transition.len() != n {
            return Err(MarkovError::Parameter(format!("{} rows for {n} states", self.transition.len())));
        }
        for (i, row) in self.transition.iter().enumerate() {
            if row.len() != n || row.iter().any(|p| !(*p >= 0.0)) {
                return Err(MarkovError::Parameter(format!("row {} is not a probability vector", i + 1)));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-12 {
                return Err(MarkovError::Parameter(format!("row {} sums to {s}", i + 1)));
            }
        }
        Ok(())
    }

    fn check_state(&self, state: usize) -> Result<(), MarkovError> {
        if (1..=self.n_states).contains(&state) {
            Ok(())
        } else {
            Err(MarkovError::State { state, n: self.n_states })
        }
    }

    /// Row `i` of `Π^k` (distribution after `k` steps from state `i`).
    pub fn distribution_after(&self, state: usize, k: usize) -> Result<Vec<f64>, MarkovError> {
        self.check_state(state)?;
        let n = self.n_states;
        let mut dist = vec![0.0; n];
        dist[state - 1] = 1.0;
        let mut next = vec![0.0; n];
        for _ in 0..k {
            next.iter_mut().for_each(|x| *x = 0.0);
            for (i, p) in dist.iter().enumerate() {
                if *p != 0.0 {
                    for (j, t) in self.transition[i].iter().enumerate() {
                        next[j] += p * t;
                    }
                }
            }
            std::mem::swap(&mut dist, &mut next);
        }
        Ok(dist)
    }

    /// `E[X_{t+k} | X_t = state]`.
    pub fn expected_state(&self, state: usize, k: usize) -> Result<f64, MarkovError> {
        let dist = self.distribution_after(state, k)?;
        Ok(dist.iter().enumerate().map(|(j, p)| (j + 1) as f64 * p).sum())
    }

    /// Expected physical value `k` steps ahead, read off the range at
    /// `target_hour`: the expected level mapped linearly onto the level
    /// midpoints, so `k = 0` returns the current level's midpoint.
    pub fn forecast(&self, range: &VariationRange, state: usize, k: usize, target_hour: usize) -> Result<f64, MarkovError> {
        let e = self.expected_state(state, k)?;
        Ok(range.value_at(target_hour, self.n_states, e))
    }

    /// Draws one next state from row `state`.
    fn step<R: Rng>(&self, state: usize, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let row = &self.transition[state - 1];
        let mut acc = 0.0;
        for (j, p) in row.iter().enumerate() {
            acc += p;
            if u < acc {
                return j + 1;
            }
        }
        // Round-off left `u` beyond the last cumulative sum: take the last
        // state with positive probability.
        row.iter().rposition(|p| *p > 0.0).map_or(state, |j| j + 1)
    }

    /// Simulates `hours · steps_per_hour` samples starting at hour 0.
    ///
    /// Each sample is uniform within its state's level at that hour.
    pub fn simulate(
        &self,
        range: &VariationRange,
        initial_state: usize,
        hours: usize,
        steps_per_hour: usize,
        seed: u64,
    ) -> Result<Trajectory, MarkovError> {
        self.check_state(initial_state)?;
        range.validate()?;
        if steps_per_hour == 0 {
            return Err(MarkovError::Parameter("steps_per_hour must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let total = hours * steps_per_hour;
        let mut states = Vec::with_capacity(total);
        let mut values = Vec::with_capacity(total);
        let mut s = initial_state;
        for t in 0..total {
            if t > 0 {
                s = self.step(s, &mut rng);
            }
            let (lo, hi) = range.level_bounds(t / steps_per_hour, self.n_states, s);
            let u: f64 = rng.random();
            values.push((lo + u * (hi - lo)).min(hi));
            states.push(s);
        }
        Ok(Trajectory { states, values, steps_per_hour })
    }

    /// Fits `Π` and the hourly range from the samples matching `context`.
    ///
    /// Transitions are counted between consecutive samples of the same
    /// calendar day; rows never visited fall back to uniform.
    pub fn fit(series: &[Sample], n_states: usize, label: Label, context: Context) -> Result<(Self, VariationRange), MarkovError> {
        if n_states < 2 {
            return Err(MarkovError::Parameter(format!("need at least 2 states, got {n_states}")));
        }
        let picked: Vec<&Sample> = series.iter().filter(|s| context.matches(s.time)).collect();
        if picked.is_empty() {
            return Err(MarkovError::EmptySeries);
        }
        let mut min = vec![f64::INFINITY; HOURS];
        let mut max = vec![f64::NEG_INFINITY; HOURS];
        for s in &picked {
            if !s.value.is_finite() {
                return Err(MarkovError::Parameter(format!("non-finite value at {}", s.time)));
            }
            let h = s.time.hour() as usize;
            min[h] = min[h].min(s.value);
            max[h] = max[h].max(s.value);
        }
        if let Some(h) = (0..HOURS).find(|&h| min[h] > max[h]) {
            return Err(MarkovError::MissingHour(h));
        }
        let range = VariationRange { min, max };

        let mut counts = vec![vec![0u64; n_states]; n_states];
        let level = |s: &Sample| range.level_of(s.time.hour() as usize, n_states, s.value);
        for pair in picked.windows(2) {
            if pair[0].time.date() == pair[1].time.date() && pair[1].time > pair[0].time {
                counts[level(pair[0]) - 1][level(pair[1]) - 1] += 1;
            }
        }
        let transition = counts
            .iter()
            .map(|row| {
                let total: u64 = row.iter().sum();
                if total == 0 {
                    vec![1.0 / n_states as f64; n_states]
                } else {
                    row.iter().map(|c| *c as f64 / total as f64).collect()
                }
            })
            .collect();
        Ok((MarkovModel { n_states, transition, label, context }, range))
    }

    /// Per-hour bounds of a flexible load modelled by this chain.
    pub fn flexible_envelope(&self, range: &VariationRange) -> Result<FlexibleLoadEnvelope, MarkovError> {
        if self.label != Label::Load {
            return Err(MarkovError::Label { expected: Label::Load, got: self.label });
        }
        range.validate()?;
        Ok(FlexibleLoadEnvelope { p_min: range.min.clone(), p_max: range.max.clone() })
    }
}

/// Simulated states and physical values, one per step.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<usize>,
    pub values: Vec<f64>,
    pub steps_per_hour: usize,
}

impl Trajectory {
    pub fn hour_of(&self, step: usize) -> usize {
        (step / self.steps_per_hour) % HOURS
    }
}

/// Hourly `[P_min, P_max]` (kW) a flexible load may be dispatched within.
#[derive(Debug, Clone, PartialEq)]
pub struct FlexibleLoadEnvelope {
    pub p_min: Vec<f64>,
    pub p_max: Vec<f64>,
}

impl FlexibleLoadEnvelope {
    pub fn bounds(&self, hour: usize) -> (f64, f64) {
        (self.p_min[hour % HOURS], self.p_max[hour % HOURS])
    }
}

/// A fitted chain together with the range it was fit on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    pub model: MarkovModel,
    pub range: VariationRange,
}

impl FittedModel {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("model serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self, MarkovError> {
        let fitted: FittedModel =
            toml::from_str(text).map_err(|e| MarkovError::Input { path: "<model>".into(), message: e.to_string() })?;
        fitted.model.validate()?;
        fitted.range.validate()?;
        Ok(fitted)
    }

    pub fn load(path: &Path) -> Result<Self, MarkovError> {
        let text = std::fs::read_to_string(path).map_err(|e| input_error(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            MarkovError::Input { message, .. } => input_error(path, message),
            other => other,
        })
    }
}

/// One solar model per calendar month.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SolarModelSet {
    models: BTreeMap<u32, FittedModel>,
}

impl SolarModelSet {
    /// Fits a model for every month present in `series`.
    pub fn fit(series: &[Sample], n_states: usize) -> Result<Self, MarkovError> {
        let months: std::collections::BTreeSet<u32> = series.iter().map(|s| s.time.month()).collect();
        if months.is_empty() {
            return Err(MarkovError::EmptySeries);
        }
        let mut models = BTreeMap::new();
        for month in months {
            let (model, range) = MarkovModel::fit(series, n_states, Label::Solar, Context::Month { month })?;
            models.insert(month, FittedModel { model, range });
        }
        Ok(SolarModelSet { models })
    }

    pub fn month(&self, month: u32) -> Option<&FittedModel> {
        self.models.get(&month)
    }

    pub fn months(&self) -> impl Iterator<Item = u32> + '_ {
        self.models.keys().copied()
    }

    pub fn insert(&mut self, month: u32, fitted: FittedModel) {
        self.models.insert(month, fitted);
    }
}

fn input_error(path: &Path, message: impl fmt::Display) -> MarkovError {
    MarkovError::Input { path: path.display().to_string(), message: message.to_string() }
}

const TIME_FORMATS: [&str; 4] = ["%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M", "%Y-%m-%dT%H:%M"];

pub fn parse_timestamp(text: &str) -> Option<NaiveDateTime> {
    let text = text.trim();
    TIME_FORMATS
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(text, f).ok())
        .or_else(|| NaiveDate::parse_from_str(text, "%Y-%m-%d").ok().and_then(|d| d.and_hms_opt(0, 0, 0)))
}

/// Reads a `timestamp,value` CSV with a header row.
pub fn read_series(path: &Path) -> Result<Vec<Sample>, MarkovError> {
    let file = std::fs::File::open(path).map_err(|e| input_error(path, e))?;
    read_series_from(file).map_err(|e| match e {
        MarkovError::Input { message, .. } => input_error(path, message),
        other => other,
    })
}

pub fn read_series_from<R: std::io::Read>(reader: R) -> Result<Vec<Sample>, MarkovError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut out = Vec::new();
    for (line, record) in rdr.records().enumerate() {
        let bad = |m: String| MarkovError::Input { path: String::new(), message: format!("row {}: {m}", line + 2) };
        let record = record.map_err(|e| bad(e.to_string()))?;
        if record.len() < 2 {
            return Err(bad("expected timestamp,value".into()));
        }
        let time = parse_timestamp(&record[0]).ok_or_else(|| bad(format!("bad timestamp {:?}", &record[0])))?;
        let value: f64 = record[1].parse().map_err(|_| bad(format!("bad value {:?}", &record[1])))?;
        out.push(Sample { time, value });
    }
    if out.is_empty() {
        return Err(MarkovError::EmptySeries);
    }
    Ok(out)
}

pub fn write_series<W: std::io::Write>(writer: W, header: &str, samples: &[Sample]) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["timestamp", header])?;
    for s in samples {
        w.write_record([s.time.format("%Y-%m-%d %H:%M:%S").to_string(), s.value.to_string()])?;
    }
    w.flush()
}
