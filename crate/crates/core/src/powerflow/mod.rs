//! Unbalanced polar-form power flow solved by Newton-Raphson.
//!
//! The unknowns are the angle of every non-slack `(bus, phase)` node and the
//! magnitude of every node that is neither slack nor voltage-controlled.
//! Loads are voltage-dependent polynomials (see [`LoadModel`]); their
//! derivatives enter the diagonal of the voltage columns of the Jacobian.
//!
//! The Newton system is `J · [Δθ; ΔV] = [ΔP; ΔQ]` with the mismatch
//! `ΔP = P_exp − P(θ, V)`, so `J` is the Jacobian of the realized injections
//! minus that of the expected injections.

mod load;
pub mod lu;

use std::fmt::Write as _;

use num_complex::Complex64;
use thiserror::Error;

pub use load::{expected_load, LoadModel, ZipMix, ZipTerm};
use load::{polynomial, polynomial_slope};
pub use lu::DenseMatrix;

use crate::grid::line_tap_ratios;
use crate::grid::{assemble_admittance, AdmittanceMatrix, BusId, DiscreteControllerState, GridError, GridModel, NodeIndex};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PowerFlowError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid load model: {0}")]
    InvalidLoad(String),
    #[error("invalid solver options: {0}")]
    Options(String),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("no convergence after {iterations} iterations (last residual {last:.3e})", last = history.last().copied().unwrap_or(f64::NAN))]
    NonConvergence { iterations: usize, history: Vec<f64> },
    #[error("singular Jacobian at pivot {column} ({unknown})")]
    SingularJacobian { column: usize, unknown: String },
}

/// Voltage magnitude (p.u.) and angle (rad) of every node.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemState {
    pub v: Vec<f64>,
    pub theta: Vec<f64>,
}

impl SystemState {
    /// Every node at `voltage` with its phase's reference angle.
    pub fn flat(nodes: &NodeIndex, voltage: f64) -> Self {
        SystemState {
            v: vec![voltage; nodes.len()],
            theta: nodes.iter().map(|(_, _, p)| p.reference_angle()).collect(),
        }
    }

    pub fn phasor(&self, node: usize) -> Complex64 {
        Complex64::from_polar(self.v[node], self.theta[node])
    }

    pub fn phasors(&self) -> Vec<Complex64> {
        (0..self.v.len()).map(|i| self.phasor(i)).collect()
    }
}

/// How a generator's bus enters the power-flow equations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BusControl {
    /// Fixed active and reactive injection.
    Pq,
    /// Fixed active injection and voltage magnitude on every phase of the bus;
    /// reactive output is solved for.
    Pv { voltage: f64 },
}

/// Injection of an aggregated generator, split evenly across its bus's phases.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneratorDispatch {
    pub bus: BusId,
    pub p_kw: f64,
    pub q_kvar: f64,
    pub control: BusControl,
}

impl GeneratorDispatch {
    pub fn pq(bus: BusId, p_kw: f64, q_kvar: f64) -> Self {
        GeneratorDispatch { bus, p_kw, q_kvar, control: BusControl::Pq }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Ignore any warm-start state.
    pub flat_start: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions { tolerance: 1e-6, max_iterations: 25, flat_start: true }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<(), PowerFlowError> {
        if !(self.tolerance > 0.0) {
            return Err(PowerFlowError::Options(format!("tolerance must be positive, got {}", self.tolerance)));
        }
        if self.max_iterations == 0 {
            return Err(PowerFlowError::Options("max_iterations must be at least 1".into()));
        }
        Ok(())
    }
}

/// `ΔP`, `ΔQ` (p.u.) at the unknown positions of a [`Layout`].
#[derive(Debug, Clone, PartialEq)]
pub struct Mismatch {
    pub dp: Vec<f64>,
    pub dq: Vec<f64>,
}

impl Mismatch {
    pub fn dp_inf(&self) -> f64 {
        self.dp.iter().fold(0.0, |a, v| a.max(v.abs()))
    }

    pub fn dq_inf(&self) -> f64 {
        self.dq.iter().fold(0.0, |a, v| a.max(v.abs()))
    }

    pub fn inf_norm(&self) -> f64 {
        self.dp_inf().max(self.dq_inf())
    }

    fn stacked(&self) -> Vec<f64> {
        self.dp.iter().chain(&self.dq).copied().collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    Slack,
    Pq,
    Pv,
}

/// Which nodes carry angle and magnitude unknowns.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub kinds: Vec<NodeKind>,
    /// Nodes with an angle unknown (and a `ΔP` equation), in node order.
    pub theta_nodes: Vec<usize>,
    /// Nodes with a magnitude unknown (and a `ΔQ` equation), in node order.
    pub v_nodes: Vec<usize>,
    theta_pos: Vec<Option<usize>>,
    v_pos: Vec<Option<usize>>,
}

impl Layout {
    pub fn unknowns(&self) -> usize {
        self.theta_nodes.len() + self.v_nodes.len()
    }

    /// `θ` then `V` unknowns packed into one vector.
    pub fn pack(&self, state: &SystemState) -> Vec<f64> {
        self.theta_nodes.iter().map(|&n| state.theta[n]).chain(self.v_nodes.iter().map(|&n| state.v[n])).collect()
    }

    pub fn unpack(&self, x: &[f64], state: &mut SystemState) {
        let nt = self.theta_nodes.len();
        for (k, &n) in self.theta_nodes.iter().enumerate() {
            state.theta[n] = x[k];
        }
        for (k, &n) in self.v_nodes.iter().enumerate() {
            state.v[n] = x[nt + k];
        }
    }

    fn describe(&self, network: &Network<'_>, column: usize) -> String {
        let nt = self.theta_nodes.len();
        if column < nt {
            format!("angle of {}", network.label(self.theta_nodes[column]))
        } else if column - nt < self.v_nodes.len() {
            format!("magnitude of {}", network.label(self.v_nodes[column - nt]))
        } else {
            format!("unknown {column}")
        }
    }
}

/// Network admittance in row form, ready for repeated solves.
///
/// Building it assembles `Y(s)` once; the controller then runs many solves
/// with different loads and injections on the same discrete state.
#[derive(Debug, Clone)]
pub struct Network<'g> {
    pub grid: &'g GridModel,
    pub state: DiscreteControllerState,
    pub admittance: AdmittanceMatrix,
    rows: Vec<Vec<(usize, f64, f64)>>,
    diag: Vec<(f64, f64)>,
    slack: Vec<bool>,
    tap_ratios: Vec<[f64; 3]>,
}

/// Per-node specified quantities in p.u.
struct NodeSpec<'a> {
    p_gen: Vec<f64>,
    q_gen: Vec<f64>,
    loads: Vec<Vec<(f64, f64, f64, &'a ZipMix)>>,
    kinds: Vec<NodeKind>,
    pv_voltage: Vec<f64>,
}

impl<'g> Network<'g> {
    pub fn new(grid: &'g GridModel, s: &DiscreteControllerState) -> Result<Self, PowerFlowError> {
        let admittance = assemble_admittance(grid, s)?;
        Ok(Self::from_admittance(grid, s, admittance))
    }

    fn from_admittance(grid: &'g GridModel, s: &DiscreteControllerState, admittance: AdmittanceMatrix) -> Self {
        let n = admittance.dim();
        let mut rows = vec![Vec::new(); n];
        let mut diag = vec![(0.0, 0.0); n];
        for ((r, c), y) in admittance.entries() {
            rows[r].push((c, y.re, y.im));
            if r == c {
                diag[r] = (y.re, y.im);
            }
        }
        let slack = admittance.nodes.iter().map(|(_, b, _)| b == grid.slack_bus).collect();
        Network { grid, state: s.clone(), rows, diag, slack, tap_ratios: line_tap_ratios(grid, s), admittance }
    }

    pub fn nodes(&self) -> &NodeIndex {
        &self.admittance.nodes
    }

    pub fn label(&self, node: usize) -> String {
        self.nodes().label(self.grid, node)
    }

    pub fn is_slack(&self, node: usize) -> bool {
        self.slack[node]
    }

    /// Flat profile with slack nodes at the substation voltage.
    pub fn flat_state(&self) -> SystemState {
        let mut s = SystemState::flat(self.nodes(), 1.0);
        for (i, slack) in self.slack.iter().enumerate() {
            if *slack {
                s.v[i] = self.grid.slack_voltage;
            }
        }
        s
    }

    pub fn layout(&self, generators: &[GeneratorDispatch]) -> Layout {
        let kinds = self.node_kinds(generators).0;
        build_layout(kinds)
    }

    fn node_kinds(&self, generators: &[GeneratorDispatch]) -> (Vec<NodeKind>, Vec<f64>) {
        let n = self.nodes().len();
        let mut kinds: Vec<NodeKind> =
            self.slack.iter().map(|&s| if s { NodeKind::Slack } else { NodeKind::Pq }).collect();
        let mut setpoint = vec![f64::NAN; n];
        for g in generators {
            if let BusControl::Pv { voltage } = g.control {
                for (i, b, _) in self.nodes().iter() {
                    if b == g.bus && kinds[i] != NodeKind::Slack {
                        kinds[i] = NodeKind::Pv;
                        setpoint[i] = voltage;
                    }
                }
            }
        }
        (kinds, setpoint)
    }

    fn node_spec<'a>(&self, loads: &'a [LoadModel], generators: &[GeneratorDispatch]) -> Result<NodeSpec<'a>, PowerFlowError> {
        let n = self.nodes().len();
        let base = self.grid.phase_base_kw();
        let mut p_gen = vec![0.0; n];
        let mut q_gen = vec![0.0; n];
        for g in generators {
            let bus = self
                .grid
                .bus(g.bus)
                .ok_or_else(|| PowerFlowError::Domain(format!("generator on missing bus {}", g.bus.0)))?;
            let share = 1.0 / bus.phases.len() as f64;
            for p in bus.phases.iter() {
                let node = self.nodes().node(g.bus, p).expect("bus phase has a node");
                p_gen[node] += g.p_kw * share / base;
                q_gen[node] += g.q_kvar * share / base;
            }
        }
        let mut node_loads = vec![Vec::new(); n];
        for l in loads {
            let node = self.nodes().node(l.bus, l.phase).ok_or_else(|| {
                PowerFlowError::InvalidLoad(format!("load on absent node bus {} phase {}", l.bus.0, l.phase))
            })?;
            if !(l.v_nom > 0.0) {
                return Err(PowerFlowError::InvalidLoad(format!("v_nom must be positive at {}", self.label(node))));
            }
            node_loads[node].push((l.p_nom / base, l.q_nom / base, l.v_nom, &l.mix));
        }
        let (kinds, pv_voltage) = self.node_kinds(generators);
        Ok(NodeSpec { p_gen, q_gen, loads: node_loads, kinds, pv_voltage })
    }

    /// Applies slack and voltage-control setpoints to a starting state.
    fn prepare_start(&self, spec: &NodeSpec<'_>, start: Option<&SystemState>) -> SystemState {
        let flat = self.flat_state();
        let mut s = match start {
            Some(st) if st.v.len() == flat.v.len() && st.v.iter().all(|v| *v > 0.0) => st.clone(),
            _ => flat.clone(),
        };
        for i in 0..s.v.len() {
            match spec.kinds[i] {
                NodeKind::Slack => {
                    s.v[i] = flat.v[i];
                    s.theta[i] = flat.theta[i];
                }
                NodeKind::Pv => s.v[i] = spec.pv_voltage[i],
                NodeKind::Pq => {}
            }
        }
        s
    }

    /// Realized injections `(P, Q)` at every node, p.u.
    pub fn injections(&self, state: &SystemState) -> (Vec<f64>, Vec<f64>) {
        let n = state.v.len();
        let mut p = vec![0.0; n];
        let mut q = vec![0.0; n];
        for i in 0..n {
            let (vi, ti) = (state.v[i], state.theta[i]);
            let (mut pi, mut qi) = (0.0, 0.0);
            for &(j, g, b) in &self.rows[i] {
                let (s, c) = (ti - state.theta[j]).sin_cos();
                let vj = state.v[j];
                pi += vj * (g * c + b * s);
                qi += vj * (g * s - b * c);
            }
            p[i] = vi * pi;
            q[i] = vi * qi;
        }
        (p, q)
    }

    fn expected(&self, spec: &NodeSpec<'_>, state: &SystemState, node: usize) -> (f64, f64) {
        let v = state.v[node];
        let mut p = spec.p_gen[node];
        let mut q = spec.q_gen[node];
        for &(pn, qn, vn, mix) in &spec.loads[node] {
            let r = v / vn;
            p -= pn * polynomial(&mix.p_terms, r);
            q -= qn * polynomial(&mix.q_terms, r);
        }
        (p, q)
    }

    fn mismatch_with(&self, spec: &NodeSpec<'_>, layout: &Layout, state: &SystemState) -> Mismatch {
        let (p, q) = self.injections(state);
        let dp = layout.theta_nodes.iter().map(|&i| self.expected(spec, state, i).0 - p[i]).collect();
        let dq = layout.v_nodes.iter().map(|&i| self.expected(spec, state, i).1 - q[i]).collect();
        Mismatch { dp, dq }
    }

    fn jacobian_with(&self, spec: &NodeSpec<'_>, layout: &Layout, state: &SystemState) -> DenseMatrix {
        let nt = layout.theta_nodes.len();
        let mut jac = DenseMatrix::zeros(layout.unknowns());
        let (p, q) = self.injections(state);
        for i in 0..state.v.len() {
            let (prow, qrow) = (layout.theta_pos[i], layout.v_pos[i].map(|k| nt + k));
            if prow.is_none() && qrow.is_none() {
                continue;
            }
            let vi = state.v[i];
            for &(j, g, b) in &self.rows[i] {
                let (tcol, vcol) = (layout.theta_pos[j], layout.v_pos[j].map(|k| nt + k));
                if j == i {
                    let (gii, bii) = self.diag[i];
                    if let Some(r) = prow {
                        if let Some(c) = tcol {
                            jac.add(r, c, -vi * vi * bii - q[i]);
                        }
                        if let Some(c) = vcol {
                            jac.add(r, c, vi * gii + p[i] / vi);
                        }
                    }
                    if let Some(r) = qrow {
                        if let Some(c) = tcol {
                            jac.add(r, c, -vi * vi * gii + p[i]);
                        }
                        if let Some(c) = vcol {
                            jac.add(r, c, -vi * bii + q[i] / vi);
                        }
                    }
                    continue;
                }
                let vj = state.v[j];
                let (s, c) = (state.theta[i] - state.theta[j]).sin_cos();
                let gs_bc = g * s - b * c;
                let gc_bs = g * c + b * s;
                if let Some(r) = prow {
                    if let Some(col) = tcol {
                        jac.add(r, col, vi * vj * gs_bc);
                    }
                    if let Some(col) = vcol {
                        jac.add(r, col, vi * gc_bs);
                    }
                }
                if let Some(r) = qrow {
                    if let Some(col) = tcol {
                        jac.add(r, col, -vi * vj * gc_bs);
                    }
                    if let Some(col) = vcol {
                        jac.add(r, col, vi * gs_bc);
                    }
                }
            }
            // Voltage-dependent loads: -∂P_exp/∂V on the self diagonal.
            if let Some(c) = layout.v_pos[i].map(|k| nt + k) {
                for &(pn, qn, vn, mix) in &spec.loads[i] {
                    let r = vi / vn;
                    if let Some(row) = prow {
                        jac.add(row, c, pn * polynomial_slope(&mix.p_terms, r) / vn);
                    }
                    if let Some(row) = qrow {
                        jac.add(row, c, qn * polynomial_slope(&mix.q_terms, r) / vn);
                    }
                }
            }
        }
        jac
    }

    /// Mismatch `[ΔP; ΔQ]` at `state`.
    pub fn mismatch(
        &self,
        state: &SystemState,
        loads: &[LoadModel],
        generators: &[GeneratorDispatch],
    ) -> Result<Mismatch, PowerFlowError> {
        let spec = self.node_spec(loads, generators)?;
        let layout = build_layout(spec.kinds.clone());
        Ok(self.mismatch_with(&spec, &layout, state))
    }

    /// Analytic Jacobian of the realized minus expected injections.
    pub fn jacobian(
        &self,
        state: &SystemState,
        loads: &[LoadModel],
        generators: &[GeneratorDispatch],
    ) -> Result<DenseMatrix, PowerFlowError> {
        check_positive(state)?;
        let spec = self.node_spec(loads, generators)?;
        let layout = build_layout(spec.kinds.clone());
        Ok(self.jacobian_with(&spec, &layout, state))
    }

    /// Newton-Raphson solve starting from `start` (or flat when absent or
    /// when `options.flat_start` is set).
    pub fn solve(
        &self,
        loads: &[LoadModel],
        generators: &[GeneratorDispatch],
        options: &SolverOptions,
        start: Option<&SystemState>,
    ) -> Result<PowerFlowSolution, PowerFlowError> {
        options.validate()?;
        let spec = self.node_spec(loads, generators)?;
        let layout = build_layout(spec.kinds.clone());
        let start = if options.flat_start { None } else { start };
        let mut state = self.prepare_start(&spec, start);
        let mut mm = self.mismatch_with(&spec, &layout, &state);
        let mut trace = vec![ResidualRecord { dp_inf: mm.dp_inf(), dq_inf: mm.dq_inf() }];

        loop {
            let norm = mm.inf_norm();
            if norm < options.tolerance {
                break;
            }
            if trace.len() >= options.max_iterations {
                return Err(PowerFlowError::NonConvergence {
                    iterations: trace.len(),
                    history: trace.iter().map(ResidualRecord::max).collect(),
                });
            }
            let jac = self.jacobian_with(&spec, &layout, &state);
            let dx = lu::solve_dense(&jac, &mm.stacked()).map_err(|e| PowerFlowError::SingularJacobian {
                column: e.column,
                unknown: layout.describe(self, e.column),
            })?;
            let x0 = layout.pack(&state);
            let mut step = 1.0;
            let mut halvings = 0;
            let (next, next_mm) = loop {
                let x: Vec<f64> = x0.iter().zip(&dx).map(|(x, d)| x + step * d).collect();
                let mut trial = state.clone();
                layout.unpack(&x, &mut trial);
                let valid = trial.v.iter().all(|v| *v > 0.0 && v.is_finite());
                let trial_mm = valid.then(|| self.mismatch_with(&spec, &layout, &trial));
                let trial_norm = trial_mm.as_ref().map_or(f64::INFINITY, Mismatch::inf_norm);
                if (trial_norm <= norm || halvings == 4) && trial_mm.is_some() {
                    break (trial, trial_mm.expect("checked"));
                }
                if halvings == 4 {
                    return Err(PowerFlowError::NonConvergence {
                        iterations: trace.len(),
                        history: trace.iter().map(ResidualRecord::max).collect(),
                    });
                }
                step *= 0.5;
                halvings += 1;
            };
            state = next;
            mm = next_mm;
            trace.push(ResidualRecord { dp_inf: mm.dp_inf(), dq_inf: mm.dq_inf() });
        }

        let (p, q) = self.injections(&state);
        let base = self.grid.phase_base_kw();
        let mut pv_reactive_kvar = Vec::new();
        for g in generators {
            if let BusControl::Pv { .. } = g.control {
                let mut total = 0.0;
                for (i, b, _) in self.nodes().iter() {
                    if b == g.bus && spec.kinds[i] == NodeKind::Pv {
                        // Whatever the node injects beyond its own scheduled load.
                        let (_, q_exp_without_gen) = {
                            let (pe, qe) = self.expected(&spec, &state, i);
                            (pe - spec.p_gen[i], qe - spec.q_gen[i])
                        };
                        total += (q[i] - q_exp_without_gen) * base;
                    }
                }
                pv_reactive_kvar.push((g.bus, total));
            }
        }
        let slack_kw = (0..p.len()).filter(|&i| self.slack[i]).map(|i| p[i] * base).sum();
        let slack_kvar = (0..q.len()).filter(|&i| self.slack[i]).map(|i| q[i] * base).sum();
        Ok(PowerFlowSolution {
            iterations: trace.len(),
            state,
            trace,
            slack_kw,
            slack_kvar,
            pv_reactive_kvar,
        })
    }

    /// Series losses of every line, kW per phase.
    ///
    /// The per-phase value is `Re(ΔV_k · conj(I_k))` across the series
    /// element, which reduces to `r |I_k|²` on uncoupled phases and sums to
    /// the exact branch loss when phases are mutually coupled.
    pub fn technical_losses(&self, state: &SystemState) -> LossReport {
        let base = self.grid.phase_base_kw();
        let nodes = self.nodes();
        let mut lines = Vec::with_capacity(self.grid.lines.len());
        for (line, ratio) in self.grid.lines.iter().zip(&self.tap_ratios) {
            let mut dv = [Complex64::default(); 3];
            for k in line.phases_present.iter() {
                let f = nodes.node(line.from_bus, k).expect("validated");
                let t = nodes.node(line.to_bus, k).expect("validated");
                dv[k.index()] = state.phasor(f) * ratio[k.index()] - state.phasor(t);
            }
            let mut per_phase = [0.0; 3];
            for k in line.phases_present.iter() {
                let mut current = Complex64::default();
                for m in line.phases_present.iter() {
                    current += line.series_admittance.get(k, m) * dv[m.index()];
                }
                per_phase[k.index()] = (dv[k.index()] * current.conj()).re * base;
            }
            lines.push(LineLoss { name: line.name.clone(), per_phase_kw: per_phase });
        }
        let total_kw = lines.iter().map(|l| l.per_phase_kw.iter().sum::<f64>()).sum();
        LossReport { lines, total_kw }
    }

    /// Active power drawn by all loads at `state`, kW.
    pub fn total_load_kw(&self, state: &SystemState, loads: &[LoadModel]) -> Result<f64, PowerFlowError> {
        let mut total = 0.0;
        for l in loads {
            let node = self
                .nodes()
                .node(l.bus, l.phase)
                .ok_or_else(|| PowerFlowError::InvalidLoad(format!("load on absent node bus {}", l.bus.0)))?;
            total += expected_load(l, state.v[node])?.0;
        }
        Ok(total)
    }
}

fn build_layout(kinds: Vec<NodeKind>) -> Layout {
    let n = kinds.len();
    let mut theta_pos = vec![None; n];
    let mut v_pos = vec![None; n];
    let mut theta_nodes = Vec::new();
    let mut v_nodes = Vec::new();
    for (i, k) in kinds.iter().enumerate() {
        if *k != NodeKind::Slack {
            theta_pos[i] = Some(theta_nodes.len());
            theta_nodes.push(i);
        }
        if *k == NodeKind::Pq {
            v_pos[i] = Some(v_nodes.len());
            v_nodes.push(i);
        }
    }
    Layout { kinds, theta_nodes, v_nodes, theta_pos, v_pos }
}

fn check_positive(state: &SystemState) -> Result<(), PowerFlowError> {
    if state.v.iter().all(|v| *v > 0.0) {
        Ok(())
    } else {
        Err(PowerFlowError::Domain("voltage magnitudes must be positive".into()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualRecord {
    pub dp_inf: f64,
    pub dq_inf: f64,
}

impl ResidualRecord {
    pub fn max(&self) -> f64 {
        self.dp_inf.max(self.dq_inf)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerFlowSolution {
    pub state: SystemState,
    /// Number of mismatch evaluations, including the initial one.
    pub iterations: usize,
    pub trace: Vec<ResidualRecord>,
    /// Active power delivered by the substation, kW.
    pub slack_kw: f64,
    pub slack_kvar: f64,
    /// Reactive output of each voltage-controlled generator, kvar.
    pub pv_reactive_kvar: Vec<(BusId, f64)>,
}

impl PowerFlowSolution {
    pub fn residual_history(&self) -> Vec<f64> {
        self.trace.iter().map(ResidualRecord::max).collect()
    }

    /// Per-iteration trace as CSV: `iteration,dp_inf,dq_inf`.
    pub fn trace_csv(&self) -> String {
        let mut out = String::from("iteration,dp_inf,dq_inf\n");
        for (i, r) in self.trace.iter().enumerate() {
            let _ = writeln!(out, "{i},{:e},{:e}", r.dp_inf, r.dq_inf);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LineLoss {
    pub name: String,
    pub per_phase_kw: [f64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub lines: Vec<LineLoss>,
    pub total_kw: f64,
}

/// Realized injections at every node of `y`, p.u.
pub fn injected_power(state: &SystemState, y: &AdmittanceMatrix) -> (Vec<f64>, Vec<f64>) {
    let n = y.dim();
    let mut p = vec![0.0; n];
    let mut q = vec![0.0; n];
    for ((i, j), yij) in y.entries() {
        let (s, c) = (state.theta[i] - state.theta[j]).sin_cos();
        let w = state.v[i] * state.v[j];
        p[i] += w * (yij.re * c + yij.im * s);
        q[i] += w * (yij.re * s - yij.im * c);
    }
    (p, q)
}

/// Assembles `Y(s)` and runs a Newton-Raphson solve from a flat start.
pub fn solve(
    grid: &GridModel,
    s: &DiscreteControllerState,
    loads: &[LoadModel],
    generators: &[GeneratorDispatch],
    options: &SolverOptions,
) -> Result<PowerFlowSolution, PowerFlowError> {
    Network::new(grid, s)?.solve(loads, generators, options, None)
}

/// Series losses at `state` for the grid in discrete state `s`.
pub fn technical_losses(state: &SystemState, grid: &GridModel, s: &DiscreteControllerState) -> Result<LossReport, PowerFlowError> {
    Ok(Network::new(grid, s)?.technical_losses(state))
}

#[cfg(test)]
mod tests;
