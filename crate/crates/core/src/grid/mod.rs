//! Unbalanced multi-phase network model.
//!
//! A [`GridModel`] holds buses, line segments and the discrete devices
//! (capacitor banks, voltage regulators) whose positions form the
//! [`DiscreteControllerState`]. All electrical quantities are per unit on a
//! single system MVA base; per-voltage-level kV bases live on each bus and are
//! only needed when converting physical data (see [`file`]).

mod admittance;
pub mod file;
mod matrix;

use std::collections::VecDeque;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use admittance::{assemble_admittance, AdmittanceMatrix, NodeIndex};
pub(crate) use admittance::line_tap_ratios;
pub use matrix::PhaseMatrix;

/// One of the three phases. Ordering is fixed: `A < B < C`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    A,
    B,
    C,
}

impl Phase {
    pub const ALL: [Phase; 3] = [Phase::A, Phase::B, Phase::C];

    pub fn index(self) -> usize {
        match self {
            Phase::A => 0,
            Phase::B => 1,
            Phase::C => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<Phase> {
        Phase::ALL.get(i).copied()
    }

    pub fn from_char(c: char) -> Option<Phase> {
        match c.to_ascii_lowercase() {
            'a' => Some(Phase::A),
            'b' => Some(Phase::B),
            'c' => Some(Phase::C),
            _ => None,
        }
    }

    /// Reference angle of a balanced positive-sequence source, in radians.
    pub fn reference_angle(self) -> f64 {
        use std::f64::consts::PI;
        match self {
            Phase::A => 0.0,
            Phase::B => -2.0 * PI / 3.0,
            Phase::C => 2.0 * PI / 3.0,
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = match self {
            Phase::A => 'a',
            Phase::B => 'b',
            Phase::C => 'c',
        };
        write!(f, "{c}")
    }
}

/// Subset of {a, b, c}.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct PhaseSet(u8);

impl PhaseSet {
    pub const EMPTY: PhaseSet = PhaseSet(0);
    pub const ABC: PhaseSet = PhaseSet(0b111);

    pub fn from_phases(phases: &[Phase]) -> Self {
        PhaseSet(phases.iter().fold(0, |acc, p| acc | (1 << p.index())))
    }

    /// Parses strings such as `"abc"`, `"bc"` or `"a"`.
    pub fn parse(s: &str) -> Option<Self> {
        let mut set = PhaseSet::EMPTY;
        for c in s.chars() {
            let p = Phase::from_char(c)?;
            if set.contains(p) {
                return None;
            }
            set = set.with(p);
        }
        (!set.is_empty()).then_some(set)
    }

    pub fn with(self, p: Phase) -> Self {
        PhaseSet(self.0 | (1 << p.index()))
    }

    pub fn contains(self, p: Phase) -> bool {
        self.0 & (1 << p.index()) != 0
    }

    pub fn is_subset_of(self, other: PhaseSet) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn iter(self) -> impl Iterator<Item = Phase> {
        Phase::ALL.into_iter().filter(move |p| self.contains(*p))
    }
}

impl fmt::Display for PhaseSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for p in self.iter() {
            write!(f, "{p}")?;
        }
        Ok(())
    }
}

/// Dense 1-based bus number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BusId(pub usize);

impl BusId {
    /// Zero-based position in [`GridModel::buses`].
    pub fn position(self) -> usize {
        self.0.wrapping_sub(1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bus {
    pub id: BusId,
    pub name: String,
    pub phases: PhaseSet,
    /// Line-to-line base voltage of the bus's voltage level.
    pub base_kv: f64,
}

/// A series branch with per-unit phase admittances.
#[derive(Debug, Clone, PartialEq)]
pub struct LineSegment {
    pub name: String,
    pub from_bus: BusId,
    pub to_bus: BusId,
    pub phases_present: PhaseSet,
    pub series_admittance: PhaseMatrix,
    /// Total line-charging admittance; half is placed at each end.
    pub shunt_susceptance: PhaseMatrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CapacitorBank {
    pub name: String,
    pub bus: BusId,
    pub phase: Phase,
    /// Susceptance added per engaged step, p.u.
    pub step_susceptance: f64,
    pub num_steps: u32,
    pub current_step: u32,
}

impl CapacitorBank {
    /// Reactive output at 1 p.u. voltage for a given step count, p.u.
    pub fn q_at_step(&self, step: u32) -> f64 {
        self.step_susceptance * f64::from(step)
    }
}

/// Single-phase step regulator placed on a line; taps scale the from-side
/// voltage by `1 + volts_per_tap * tap`.
#[derive(Debug, Clone, PartialEq)]
pub struct VoltageRegulator {
    pub name: String,
    /// Index into [`GridModel::lines`].
    pub line: usize,
    pub phase: Phase,
    /// Bus whose voltage (same phase) the regulator holds.
    pub bus: BusId,
    pub tap: i32,
    pub tap_range: (i32, i32),
    pub volts_per_tap: f64,
    /// Half-width of the no-action band around `target`, p.u.
    pub deadband: f64,
    pub target: f64,
}

impl VoltageRegulator {
    pub fn ratio(&self, tap: i32) -> f64 {
        1.0 + self.volts_per_tap * f64::from(tap)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GeneratorKind {
    Renewable,
    Dispatchable,
}

/// Aggregated generator at a bus with time-varying capability bounds (kW / kvar).
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorSpec {
    pub name: String,
    pub bus: BusId,
    pub kind: GeneratorKind,
    pub apparent_limit_kva: f64,
    pub p_min: Vec<f64>,
    pub p_max: Vec<f64>,
    pub q_min: Vec<f64>,
    pub q_max: Vec<f64>,
}

impl GeneratorSpec {
    /// A renewable unit whose active output is fixed by `profile_kw`.
    pub fn renewable(name: &str, bus: BusId, apparent_limit_kva: f64, profile_kw: Vec<f64>) -> Self {
        let q_cap: Vec<f64> = profile_kw
            .iter()
            .map(|p| (apparent_limit_kva * apparent_limit_kva - p * p).max(0.0).sqrt())
            .collect();
        GeneratorSpec {
            name: name.to_string(),
            bus,
            kind: GeneratorKind::Renewable,
            apparent_limit_kva,
            p_min: profile_kw.clone(),
            p_max: profile_kw,
            q_min: q_cap.iter().map(|q| -q).collect(),
            q_max: q_cap,
        }
    }
}

/// Positions of every discrete device: one entry per capacitor bank and per
/// regulator, in model order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct DiscreteControllerState {
    pub capacitor_steps: Vec<u32>,
    pub regulator_taps: Vec<i32>,
}

impl fmt::Display for DiscreteControllerState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let caps: Vec<String> = self.capacitor_steps.iter().map(u32::to_string).collect();
        let taps: Vec<String> = self.regulator_taps.iter().map(i32::to_string).collect();
        write!(f, "caps[{}] taps[{}]", caps.join(" "), taps.join(" "))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridModel {
    pub base_mva: f64,
    pub slack_bus: BusId,
    pub slack_voltage: f64,
    pub buses: Vec<Bus>,
    pub lines: Vec<LineSegment>,
    pub capacitors: Vec<CapacitorBank>,
    pub regulators: Vec<VoltageRegulator>,
    pub generators: Vec<GeneratorSpec>,
}

/// A structural problem found by [`validate`].
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Defect {
    #[error("grid has no buses")]
    NoBuses,
    #[error("system base must be positive, got {0}")]
    BadBase(f64),
    #[error("bus at position {position} has id {id}; ids must be dense 1..n")]
    NonDenseBusId { position: usize, id: usize },
    #[error("bus {0} has no phases")]
    BusWithoutPhases(String),
    #[error("duplicate bus name {0}")]
    DuplicateBusName(String),
    #[error("{device} references missing bus {bus}")]
    MissingBus { device: String, bus: usize },
    #[error("line {0} connects a bus to itself")]
    SelfLoop(String),
    #[error("{device} uses phase(s) {phases} not present on bus {bus}")]
    PhaseMismatch { device: String, bus: String, phases: String },
    #[error("line {line} has nonzero admittance on absent phases")]
    AbsentPhaseEntries { line: String },
    #[error("bus {0} is not connected to the substation")]
    Disconnected(String),
    #[error("capacitor {name} step {step} outside 0..={max}")]
    CapacitorStep { name: String, step: u32, max: u32 },
    #[error("capacitor {0} must have at least one step")]
    CapacitorNoSteps(String),
    #[error("regulator {name} tap {tap} outside [{min}, {max}]")]
    TapOutOfRange { name: String, tap: i32, min: i32, max: i32 },
    #[error("regulator {0} deadband must be positive")]
    Deadband(String),
    #[error("regulator {name} references missing line {line}")]
    MissingLine { name: String, line: usize },
    #[error("generator {0} bounds are inconsistent")]
    GeneratorBounds(String),
}

impl Defect {
    fn is_topological(&self) -> bool {
        matches!(self, Defect::Disconnected(_) | Defect::SelfLoop(_))
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GridError {
    #[error("topology error: {0}")]
    Topology(Defect),
    #[error("model error: {0}")]
    Model(Defect),
    #[error("controller state {state} is outside the feasible set: {reason}")]
    InfeasibleState { state: String, reason: String },
    #[error("grid file: {0}")]
    File(String),
}

impl From<Defect> for GridError {
    fn from(d: Defect) -> Self {
        if d.is_topological() {
            GridError::Topology(d)
        } else {
            GridError::Model(d)
        }
    }
}

impl GridModel {
    pub fn bus(&self, id: BusId) -> Option<&Bus> {
        self.buses.get(id.position()).filter(|b| b.id == id)
    }

    pub fn bus_by_name(&self, name: &str) -> Option<&Bus> {
        self.buses.iter().find(|b| b.name == name)
    }

    /// Per-phase power base in kW (one third of the system base).
    pub fn phase_base_kw(&self) -> f64 {
        self.base_mva * 1000.0 / 3.0
    }

    /// The device positions currently stored in the model.
    pub fn controller_state(&self) -> DiscreteControllerState {
        DiscreteControllerState {
            capacitor_steps: self.capacitors.iter().map(|c| c.current_step).collect(),
            regulator_taps: self.regulators.iter().map(|r| r.tap).collect(),
        }
    }

    /// Stores `s` as the current device positions.
    pub fn apply_state(&mut self, s: &DiscreteControllerState) -> Result<(), GridError> {
        self.check_state(s)?;
        for (c, step) in self.capacitors.iter_mut().zip(&s.capacitor_steps) {
            c.current_step = *step;
        }
        for (r, tap) in self.regulators.iter_mut().zip(&s.regulator_taps) {
            r.tap = *tap;
        }
        Ok(())
    }

    /// Checks that `s` lies in the feasible set of device positions.
    pub fn check_state(&self, s: &DiscreteControllerState) -> Result<(), GridError> {
        let infeasible = |reason: String| GridError::InfeasibleState { state: s.to_string(), reason };
        if s.capacitor_steps.len() != self.capacitors.len() {
            return Err(infeasible(format!(
                "expected {} capacitor entries, got {}",
                self.capacitors.len(),
                s.capacitor_steps.len()
            )));
        }
        if s.regulator_taps.len() != self.regulators.len() {
            return Err(infeasible(format!(
                "expected {} regulator entries, got {}",
                self.regulators.len(),
                s.regulator_taps.len()
            )));
        }
        for (c, step) in self.capacitors.iter().zip(&s.capacitor_steps) {
            if *step > c.num_steps {
                return Err(infeasible(format!("capacitor {} step {step} > {}", c.name, c.num_steps)));
            }
        }
        for (r, tap) in self.regulators.iter().zip(&s.regulator_taps) {
            if *tap < r.tap_range.0 || *tap > r.tap_range.1 {
                return Err(infeasible(format!("regulator {} tap {tap} out of range", r.name)));
            }
        }
        Ok(())
    }

    /// Buses reachable from the substation through line segments.
    pub fn connected_buses(&self) -> Vec<bool> {
        let n = self.buses.len();
        let mut adj = vec![Vec::new(); n];
        for l in &self.lines {
            let (f, t) = (l.from_bus.position(), l.to_bus.position());
            if f < n && t < n {
                adj[f].push(t);
                adj[t].push(f);
            }
        }
        let mut seen = vec![false; n];
        let start = self.slack_bus.position();
        if start >= n {
            return seen;
        }
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        while let Some(b) = queue.pop_front() {
            for &nb in &adj[b] {
                if !seen[nb] {
                    seen[nb] = true;
                    queue.push_back(nb);
                }
            }
        }
        seen
    }
}

/// Lists every structural defect of `grid`; an empty list means the model is
/// connected, phase-consistent, densely indexed and has sane device bounds.
pub fn validate(grid: &GridModel) -> Vec<Defect> {
    let mut defects = Vec::new();
    if grid.buses.is_empty() {
        defects.push(Defect::NoBuses);
        return defects;
    }
    if !(grid.base_mva > 0.0) {
        defects.push(Defect::BadBase(grid.base_mva));
    }
    let n = grid.buses.len();
    for (pos, bus) in grid.buses.iter().enumerate() {
        if bus.id.0 != pos + 1 {
            defects.push(Defect::NonDenseBusId { position: pos, id: bus.id.0 });
        }
        if bus.phases.is_empty() {
            defects.push(Defect::BusWithoutPhases(bus.name.clone()));
        }
        if grid.buses[..pos].iter().any(|b| b.name == bus.name) {
            defects.push(Defect::DuplicateBusName(bus.name.clone()));
        }
    }
    let bus_ok = |id: BusId| id.0 >= 1 && id.0 <= n;
    if !bus_ok(grid.slack_bus) {
        defects.push(Defect::MissingBus { device: "substation".into(), bus: grid.slack_bus.0 });
    }

    let mut lines_ok = true;
    for line in &grid.lines {
        let device = format!("line {}", line.name);
        for id in [line.from_bus, line.to_bus] {
            if !bus_ok(id) {
                defects.push(Defect::MissingBus { device: device.clone(), bus: id.0 });
                lines_ok = false;
            }
        }
        if line.from_bus == line.to_bus {
            defects.push(Defect::SelfLoop(line.name.clone()));
        }
        for id in [line.from_bus, line.to_bus] {
            if let Some(bus) = grid.bus(id) {
                if !line.phases_present.is_subset_of(bus.phases) {
                    defects.push(Defect::PhaseMismatch {
                        device: device.clone(),
                        bus: bus.name.clone(),
                        phases: line.phases_present.to_string(),
                    });
                }
            }
        }
        if line.series_admittance.max_outside(line.phases_present) != 0.0
            || line.shunt_susceptance.max_outside(line.phases_present) != 0.0
        {
            defects.push(Defect::AbsentPhaseEntries { line: line.name.clone() });
        }
    }

    for cap in &grid.capacitors {
        let device = format!("capacitor {}", cap.name);
        match grid.bus(cap.bus) {
            None => defects.push(Defect::MissingBus { device, bus: cap.bus.0 }),
            Some(bus) if !bus.phases.contains(cap.phase) => defects.push(Defect::PhaseMismatch {
                device,
                bus: bus.name.clone(),
                phases: cap.phase.to_string(),
            }),
            Some(_) => {}
        }
        if cap.num_steps == 0 {
            defects.push(Defect::CapacitorNoSteps(cap.name.clone()));
        }
        if cap.current_step > cap.num_steps {
            defects.push(Defect::CapacitorStep {
                name: cap.name.clone(),
                step: cap.current_step,
                max: cap.num_steps,
            });
        }
    }

    for reg in &grid.regulators {
        match grid.lines.get(reg.line) {
            None => defects.push(Defect::MissingLine { name: reg.name.clone(), line: reg.line }),
            Some(line) if !line.phases_present.contains(reg.phase) => {
                defects.push(Defect::PhaseMismatch {
                    device: format!("regulator {}", reg.name),
                    bus: line.name.clone(),
                    phases: reg.phase.to_string(),
                })
            }
            Some(_) => {}
        }
        match grid.bus(reg.bus) {
            None => defects.push(Defect::MissingBus { device: format!("regulator {}", reg.name), bus: reg.bus.0 }),
            Some(bus) if !bus.phases.contains(reg.phase) => defects.push(Defect::PhaseMismatch {
                device: format!("regulator {}", reg.name),
                bus: bus.name.clone(),
                phases: reg.phase.to_string(),
            }),
            Some(_) => {}
        }
        let (lo, hi) = reg.tap_range;
        if reg.tap < lo || reg.tap > hi {
            defects.push(Defect::TapOutOfRange { name: reg.name.clone(), tap: reg.tap, min: lo, max: hi });
        }
        if !(reg.deadband > 0.0) {
            defects.push(Defect::Deadband(reg.name.clone()));
        }
    }

    for g in &grid.generators {
        if !bus_ok(g.bus) {
            defects.push(Defect::MissingBus { device: format!("generator {}", g.name), bus: g.bus.0 });
        }
        let lengths_match = g.p_min.len() == g.p_max.len()
            && g.q_min.len() == g.q_max.len()
            && g.p_min.len() == g.q_min.len();
        let ordered = lengths_match
            && g.p_min.iter().zip(&g.p_max).all(|(lo, hi)| lo <= hi)
            && g.q_min.iter().zip(&g.q_max).all(|(lo, hi)| lo <= hi);
        let renewable_fixed =
            g.kind != GeneratorKind::Renewable || g.p_min.iter().zip(&g.p_max).all(|(lo, hi)| lo == hi);
        if !ordered || !renewable_fixed || !(g.apparent_limit_kva >= 0.0) {
            defects.push(Defect::GeneratorBounds(g.name.clone()));
        }
    }

    if lines_ok && bus_ok(grid.slack_bus) {
        let seen = grid.connected_buses();
        for (bus, reached) in grid.buses.iter().zip(seen) {
            if !reached {
                defects.push(Defect::Disconnected(bus.name.clone()));
            }
        }
    }
    defects
}

/// Small synthetic grids for tests and examples.
pub mod testing {
    use num_complex::Complex64;

    use super::*;

    /// Single-phase radial chain with one series admittance per hop.
    pub fn single_phase_chain(series: &[Complex64]) -> GridModel {
        let a = PhaseSet::from_phases(&[Phase::A]);
        let buses = (0..=series.len())
            .map(|i| Bus { id: BusId(i + 1), name: format!("{}", i + 1), phases: a, base_kv: 1.0 })
            .collect();
        let lines = series
            .iter()
            .enumerate()
            .map(|(i, y)| LineSegment {
                name: format!("{}-{}", i + 1, i + 2),
                from_bus: BusId(i + 1),
                to_bus: BusId(i + 2),
                phases_present: a,
                series_admittance: PhaseMatrix::diagonal(*y, a),
                shunt_susceptance: PhaseMatrix::zero(),
            })
            .collect();
        GridModel {
            base_mva: 3.0,
            slack_bus: BusId(1),
            slack_voltage: 1.0,
            buses,
            lines,
            capacitors: vec![],
            regulators: vec![],
            generators: vec![],
        }
    }
}
