//! Two-timescale Volt/VAR control.
//!
//! The slow loop picks capacitor steps once per hour to cover the forecast
//! reactive demand. The fast loop runs every minute: it chooses the
//! reactive output of each smart inverter and the consumption of each
//! flexible load to minimize
//!
//! ```text
//! C = Σ line losses (p.u.) + Σ α_n (v_n − v_nom)²
//! ```
//!
//! subject to `|P + jQ| ≤ S` per inverter, the flexible-load envelope, and the
//! power-flow equations (every candidate is a converged Newton solve).
//! Regulators act on their own local rule after each fast step.

use num_complex::Complex64;
use thiserror::Error;

use crate::grid::{BusId, CapacitorBank, DiscreteControllerState};
use crate::powerflow::{
    BusControl, GeneratorDispatch, LoadModel, Network, PowerFlowError, PowerFlowSolution, SolverOptions, SystemState,
    ZipMix,
};

#[derive(Debug, Error)]
pub enum ControlError {
    #[error("invalid control parameter: {0}")]
    Parameter(String),
    #[error("no candidate decision converged: {source}")]
    Infeasible {
        /// Best decision that did converge, if any.
        best: Option<Box<ControlDecision>>,
        source: PowerFlowError,
    },
}

/// Smart inverter of a solar unit. Active output is whatever the sun gives,
/// clipped at the inverter rating; reactive output is the control.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Inverter {
    pub bus: BusId,
    pub apparent_kva: f64,
    /// Available active power this step, kW.
    pub p_kw: f64,
}

impl Inverter {
    pub fn p_out(&self) -> f64 {
        self.p_kw.clamp(0.0, self.apparent_kva.max(0.0))
    }

    /// `sqrt(S² − P²)`.
    pub fn q_limit(&self) -> f64 {
        let p = self.p_out();
        (self.apparent_kva * self.apparent_kva - p * p).max(0.0).sqrt()
    }
}

/// A load whose active power may be set anywhere in `[p_min, p_max]`; its
/// reactive power follows a fixed power factor. Split evenly over the bus's phases.
#[derive(Debug, Clone, PartialEq)]
pub struct FlexibleLoad {
    pub bus: BusId,
    pub p_min: f64,
    pub p_max: f64,
    /// What the load would draw if left alone, kW.
    pub p_ref: f64,
    /// `Q / P`.
    pub tan_phi: f64,
    pub mix: ZipMix,
}

impl FlexibleLoad {
    pub fn reference(&self) -> f64 {
        self.p_ref.clamp(self.p_min, self.p_max)
    }

    /// Constant-voltage-shape load models drawing `p_kw` in total.
    pub fn models(&self, network: &Network<'_>, p_kw: f64) -> Vec<LoadModel> {
        let phases = network.grid.bus(self.bus).map(|b| b.phases).unwrap_or_default();
        let share = 1.0 / phases.len().max(1) as f64;
        phases
            .iter()
            .map(|phase| LoadModel {
                bus: self.bus,
                phase,
                p_nom: p_kw * share,
                q_nom: p_kw * self.tan_phi * share,
                mix: self.mix.clone(),
                v_nom: 1.0,
                class: Some("flexible".into()),
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FlexMode {
    /// Flexible load is a decision variable within its envelope.
    #[default]
    MinimizeCost,
    /// Flexible load follows its reference; only inverters are optimized.
    TrackSignal,
}

/// One fast-timescale decision problem on a fixed discrete state.
#[derive(Debug, Clone)]
pub struct FastControlProblem<'a> {
    pub network: &'a Network<'a>,
    /// Every load that is not flexible.
    pub loads: &'a [LoadModel],
    pub inverters: Vec<Inverter>,
    pub flexible: Vec<FlexibleLoad>,
    /// Voltage-deviation weight of every node.
    pub alpha: Vec<f64>,
    pub v_nom: f64,
    pub mode: FlexMode,
    pub options: SolverOptions,
    /// Warm start for the Newton solves.
    pub start: Option<SystemState>,
}

impl FastControlProblem<'_> {
    fn validate(&self) -> Result<(), ControlError> {
        if self.alpha.len() != self.network.nodes().len() || self.alpha.iter().any(|a| !(*a >= 0.0)) {
            return Err(ControlError::Parameter("alpha needs one non-negative weight per node".into()));
        }
        for f in &self.flexible {
            if !(f.p_min <= f.p_max) {
                return Err(ControlError::Parameter(format!("flexible load at bus {}: p_min > p_max", f.bus.0)));
            }
        }
        for inv in &self.inverters {
            if !(inv.apparent_kva >= 0.0) {
                return Err(ControlError::Parameter(format!("inverter at bus {}: negative rating", inv.bus.0)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlDecision {
    pub q_inverter: Vec<f64>,
    pub p_flexible: Vec<f64>,
    pub s: DiscreteControllerState,
    pub cost: f64,
    pub solution: PowerFlowSolution,
    pub losses_kw: f64,
}

/// `α = weight` on every phase of the listed buses, 0 elsewhere.
pub fn alpha_for_buses(network: &Network<'_>, buses: &[BusId], weight: f64) -> Vec<f64> {
    network.nodes().iter().map(|(_, b, _)| if buses.contains(&b) { weight } else { 0.0 }).collect()
}

/// Losses (p.u. of the per-phase base) plus weighted squared deviation
/// from `v_nom`.
pub fn fast_cost(state: &SystemState, network: &Network<'_>, alpha: &[f64], v_nom: f64) -> f64 {
    let losses = network.technical_losses(state).total_kw / network.grid.phase_base_kw();
    let deviation: f64 = state.v.iter().zip(alpha).map(|(v, a)| a * (v - v_nom) * (v - v_nom)).sum();
    losses + deviation
}

struct Evaluator<'p, 'a> {
    problem: &'p FastControlProblem<'a>,
    start: Option<SystemState>,
    evaluations: usize,
}

impl Evaluator<'_, '_> {
    fn run(&mut self, q: &[f64], p: &[f64]) -> Result<ControlDecision, PowerFlowError> {
        self.evaluations += 1;
        let pb = self.problem;
        let gens: Vec<GeneratorDispatch> =
            pb.inverters.iter().zip(q).map(|(inv, q)| GeneratorDispatch::pq(inv.bus, inv.p_out(), *q)).collect();
        let mut loads = pb.loads.to_vec();
        for (f, p) in pb.flexible.iter().zip(p) {
            loads.extend(f.models(pb.network, *p));
        }
        let opts = SolverOptions { flat_start: self.start.is_none(), ..pb.options };
        let solution = pb.network.solve(&loads, &gens, &opts, self.start.as_ref())?;
        let cost = fast_cost(&solution.state, pb.network, &pb.alpha, pb.v_nom);
        let losses_kw = pb.network.technical_losses(&solution.state).total_kw;
        Ok(ControlDecision {
            q_inverter: q.to_vec(),
            p_flexible: p.to_vec(),
            s: pb.network.state.clone(),
            cost,
            solution,
            losses_kw,
        })
    }

    fn cost(&mut self, q: &[f64], p: &[f64], best: &mut ControlDecision) -> f64 {
        match self.run(q, p) {
            Ok(d) => {
                let c = d.cost;
                if c < best.cost {
                    *best = d;
                }
                c
            }
            Err(_) => f64::INFINITY,
        }
    }
}

/// Unity power factor and flexible load at its reference: what the feeder
/// does without fast control.
pub fn ieee1547_baseline(problem: &FastControlProblem<'_>) -> Result<ControlDecision, ControlError> {
    problem.validate()?;
    let mut ev = Evaluator { problem, start: problem.start.clone(), evaluations: 0 };
    let q = vec![0.0; problem.inverters.len()];
    let p: Vec<f64> = problem.flexible.iter().map(FlexibleLoad::reference).collect();
    ev.run(&q, &p).map_err(|source| ControlError::Infeasible { best: None, source })
}

/// Fast-timescale decision minimizing [`fast_cost`].
///
/// Starts from the better of the do-nothing decision and the inverter
/// reactive output that would hold its bus at `v_nom` (a voltage-controlled
/// solve, clamped to the inverter's capability), then runs coordinate
/// descent with a golden-section search per decision variable. Every
/// candidate is a full power-flow solve; the result never costs more than
/// the do-nothing decision.
pub fn solve_fast(problem: &FastControlProblem<'_>) -> Result<ControlDecision, ControlError> {
    let mut best = ieee1547_baseline(problem)?;
    let mut ev = Evaluator { problem, start: Some(best.solution.state.clone()), evaluations: 0 };

    let limits: Vec<f64> = problem.inverters.iter().map(Inverter::q_limit).collect();
    if !problem.inverters.is_empty() {
        let gens: Vec<GeneratorDispatch> = problem
            .inverters
            .iter()
            .map(|inv| GeneratorDispatch {
                bus: inv.bus,
                p_kw: inv.p_out(),
                q_kvar: 0.0,
                control: BusControl::Pv { voltage: problem.v_nom },
            })
            .collect();
        let mut loads = problem.loads.to_vec();
        for (f, p) in problem.flexible.iter().zip(&best.p_flexible) {
            loads.extend(f.models(problem.network, *p));
        }
        let opts = SolverOptions { flat_start: false, ..problem.options };
        if let Ok(pv) = problem.network.solve(&loads, &gens, &opts, Some(&best.solution.state)) {
            let q: Vec<f64> = pv
                .pv_reactive_kvar
                .iter()
                .zip(&limits)
                .map(|((_, q), lim)| q.clamp(-lim, *lim))
                .collect();
            let p = best.p_flexible.clone();
            ev.cost(&q, &p, &mut best);
        }
    }

    // (is_inverter, index, lo, hi)
    let mut vars: Vec<(bool, usize, f64, f64)> =
        limits.iter().enumerate().filter(|(_, l)| **l > 0.0).map(|(i, l)| (true, i, -l, *l)).collect();
    if problem.mode == FlexMode::MinimizeCost {
        for (j, f) in problem.flexible.iter().enumerate() {
            if f.p_max > f.p_min {
                vars.push((false, j, f.p_min, f.p_max));
            }
        }
    }

    for _round in 0..4 {
        let before = best.cost;
        for &(is_q, idx, lo, hi) in &vars {
            ev.start = Some(best.solution.state.clone());
            let (q0, p0) = (best.q_inverter.clone(), best.p_flexible.clone());
            let mut f = |x: f64, best: &mut ControlDecision| {
                let (mut q, mut p) = (q0.clone(), p0.clone());
                if is_q {
                    q[idx] = x;
                } else {
                    p[idx] = x;
                }
                ev.cost(&q, &p, best)
            };
            golden_section(lo, hi, (hi - lo) * 1e-3, |x| f(x, &mut best));
        }
        if !(best.cost < before - 1e-12 * before.abs().max(1e-12)) {
            break;
        }
    }
    Ok(best)
}

/// Minimizes `f` on `[lo, hi]`, evaluating both ends as well; returns the
/// best point seen.
pub fn golden_section(lo: f64, hi: f64, tol: f64, mut f: impl FnMut(f64) -> f64) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut best = (lo, f(lo));
    let consider = |x: f64, fx: f64, best: &mut (f64, f64)| {
        if fx < best.1 {
            *best = (x, fx);
        }
    };
    let fh = f(hi);
    consider(hi, fh, &mut best);
    let (mut a, mut b) = (lo, hi);
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    consider(c, fc, &mut best);
    consider(d, fd, &mut best);
    while b - a > tol.max(f64::EPSILON * (a.abs() + b.abs())) {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
            consider(c, fc, &mut best);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
            consider(d, fd, &mut best);
        }
    }
    best
}

/// Capacitor steps whose output (kvar at 1 p.u.) is closest to
/// `q_forecast_kvar`; ties go to the fewest step changes from `previous`,
/// then to the lexicographically smallest setting.
pub fn solve_slow(
    q_forecast_kvar: f64,
    banks: &[CapacitorBank],
    previous: &[u32],
    phase_base_kw: f64,
) -> Result<Vec<u32>, ControlError> {
    if previous.len() != banks.len() {
        return Err(ControlError::Parameter(format!("{} previous steps for {} banks", previous.len(), banks.len())));
    }
    let combos: f64 = banks.iter().map(|b| f64::from(b.num_steps) + 1.0).product();
    if combos > 1e7 {
        return Err(ControlError::Parameter(format!("{combos} capacitor settings is too many to enumerate")));
    }
    let kvar: Vec<f64> = banks.iter().map(|b| b.q_at_step(1) * phase_base_kw).collect();
    let mut steps = vec![0u32; banks.len()];
    let mut best: Option<(f64, u32, Vec<u32>)> = None;
    loop {
        let q: f64 = steps.iter().zip(&kvar).map(|(s, k)| f64::from(*s) * k).sum();
        let gap = (q_forecast_kvar - q).abs();
        let changes: u32 = steps.iter().zip(previous).map(|(a, b)| a.abs_diff(*b)).sum();
        let better = match &best {
            None => true,
            Some((g, c, _)) => gap < g - 1e-9 || ((gap - g).abs() <= 1e-9 && changes < *c),
        };
        if better {
            best = Some((gap, changes, steps.clone()));
        }
        // Odometer increment.
        let mut k = banks.len();
        loop {
            if k == 0 {
                return Ok(best.expect("at least one setting").2);
            }
            k -= 1;
            if steps[k] < banks[k].num_steps {
                steps[k] += 1;
                break;
            }
            steps[k] = 0;
        }
    }
}

/// Moves each regulator at most one tap toward its target when its
/// monitored voltage is outside the deadband. Returns the number of moves.
pub fn regulator_step(state: &SystemState, network: &Network<'_>, s: &mut DiscreteControllerState) -> usize {
    let mut moves = 0;
    for (k, reg) in network.grid.regulators.iter().enumerate() {
        let Some(node) = network.nodes().node(reg.bus, reg.phase) else { continue };
        let v = state.v[node];
        let tap = &mut s.regulator_taps[k];
        if v < reg.target - reg.deadband && *tap < reg.tap_range.1 {
            *tap += 1;
            moves += 1;
        } else if v > reg.target + reg.deadband && *tap > reg.tap_range.0 {
            *tap -= 1;
            moves += 1;
        }
    }
    moves
}

/// Voltage excursions beyond `1 ± tolerance` over a window, normalized by
/// the number of customer nodes.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StarfiIndex {
    pub events: usize,
    pub customers: usize,
}

impl StarfiIndex {
    pub fn value(&self) -> f64 {
        if self.customers == 0 {
            0.0
        } else {
            self.events as f64 / self.customers as f64
        }
    }
}

pub fn check_tolerance(tolerance: f64) -> Result<(), ControlError> {
    if tolerance > 0.0 && tolerance <= 0.1 {
        Ok(())
    } else {
        Err(ControlError::Parameter(format!("voltage tolerance must be in (0, 0.1], got {tolerance}")))
    }
}

pub fn in_band(v: f64, tolerance: f64) -> bool {
    v >= 1.0 - tolerance && v <= 1.0 + tolerance
}

/// `window[t][c]` is the voltage of customer node `c` at step `t`.
pub fn starfi(window: &[Vec<f64>], tolerance: f64) -> Result<StarfiIndex, ControlError> {
    check_tolerance(tolerance)?;
    let customers = window.first().map_or(0, Vec::len);
    let events = window.iter().flatten().filter(|v| !in_band(**v, tolerance)).count();
    Ok(StarfiIndex { events, customers })
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct QualityMetrics {
    pub starfi: f64,
    pub tap_changes: u64,
    pub losses_kwh: f64,
    /// Feeder-head demand avoided by the decision, kW.
    pub lost_capacity_kw: f64,
    /// Line losses avoided by the decision, kW.
    pub loss_reduction_kw: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfitWeights {
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
}

impl Default for ProfitWeights {
    fn default() -> Self {
        ProfitWeights { k1: 1.0, k2: 1.0, k3: 1.0 }
    }
}

impl ProfitWeights {
    pub fn validate(&self) -> Result<(), ControlError> {
        if [self.k1, self.k2, self.k3].iter().all(|k| *k >= 0.0) {
            Ok(())
        } else {
            Err(ControlError::Parameter("profit weights must be non-negative".into()))
        }
    }
}

/// `K1 ΔC + K2 ΔP_l − K3 STARFI`.
pub fn profit(metrics: &QualityMetrics, weights: &ProfitWeights) -> f64 {
    weights.k1 * metrics.lost_capacity_kw + weights.k2 * metrics.loss_reduction_kw - weights.k3 * metrics.starfi
}

/// `|P + jQ|` of an inverter decision, kVA.
pub fn apparent_power(inv: &Inverter, q_kvar: f64) -> f64 {
    Complex64::new(inv.p_out(), q_kvar).norm()
}
