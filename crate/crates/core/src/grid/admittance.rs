use std::collections::BTreeMap;

use num_complex::Complex64;

use super::{validate, BusId, DiscreteControllerState, GridError, GridModel, Phase};

/// Maps each present `(bus, phase)` pair to a dense node number.
///
/// Nodes are ordered by bus id, then phase. Phases absent on a bus get no node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeIndex {
    nodes: Vec<(BusId, Phase)>,
    by_bus: Vec<[Option<usize>; 3]>,
}

impl NodeIndex {
    pub fn new(grid: &GridModel) -> Self {
        let mut nodes = Vec::new();
        let mut by_bus = vec![[None; 3]; grid.buses.len()];
        for bus in &grid.buses {
            for p in bus.phases.iter() {
                by_bus[bus.id.position()][p.index()] = Some(nodes.len());
                nodes.push((bus.id, p));
            }
        }
        NodeIndex { nodes, by_bus }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, bus: BusId, phase: Phase) -> Option<usize> {
        self.by_bus.get(bus.position())?[phase.index()]
    }

    pub fn key(&self, node: usize) -> (BusId, Phase) {
        self.nodes[node]
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, BusId, Phase)> + '_ {
        self.nodes.iter().enumerate().map(|(i, &(b, p))| (i, b, p))
    }

    /// Human-readable label such as `675.b`.
    pub fn label(&self, grid: &GridModel, node: usize) -> String {
        let (bus, phase) = self.nodes[node];
        let name = grid.bus(bus).map(|b| b.name.as_str()).unwrap_or("?");
        format!("{name}.{phase}")
    }
}

/// Sparse complex nodal admittance matrix in coordinate form.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmittanceMatrix {
    pub nodes: NodeIndex,
    entries: BTreeMap<(usize, usize), Complex64>,
}

impl AdmittanceMatrix {
    pub fn dim(&self) -> usize {
        self.nodes.len()
    }

    /// Entry `(row, col)`; structurally absent entries are zero.
    pub fn get(&self, row: usize, col: usize) -> Complex64 {
        self.entries.get(&(row, col)).copied().unwrap_or_default()
    }

    /// Stored entries in row-major order.
    pub fn entries(&self) -> impl Iterator<Item = ((usize, usize), Complex64)> + '_ {
        self.entries.iter().map(|(k, v)| (*k, *v))
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    /// Compressed rows: for every node, its `(col, Y)` entries in column order.
    pub fn rows(&self) -> Vec<Vec<(usize, Complex64)>> {
        let mut rows = vec![Vec::new(); self.dim()];
        for (&(r, c), &v) in &self.entries {
            rows[r].push((c, v));
        }
        rows
    }

    /// Current injections `I = Y·V`.
    pub fn mul(&self, v: &[Complex64]) -> Vec<Complex64> {
        let mut out = vec![Complex64::default(); self.dim()];
        for (&(r, c), &y) in &self.entries {
            out[r] += y * v[c];
        }
        out
    }

    fn add(&mut self, row: usize, col: usize, value: Complex64) {
        if value != Complex64::default() {
            *self.entries.entry((row, col)).or_default() += value;
        }
    }
}

/// Tap ratio per phase of every line; 1.0 where no regulator acts.
pub(crate) fn line_tap_ratios(grid: &GridModel, s: &DiscreteControllerState) -> Vec<[f64; 3]> {
    let mut ratios = vec![[1.0; 3]; grid.lines.len()];
    for (reg, tap) in grid.regulators.iter().zip(&s.regulator_taps) {
        ratios[reg.line][reg.phase.index()] = reg.ratio(*tap);
    }
    ratios
}

/// Builds `Y(s)` for the network.
///
/// Diagonal blocks collect the series admittance and half the line charging
/// of every incident line plus engaged capacitor steps; off-diagonal blocks
/// hold the negated series admittance. A regulator scales its line's from-side
/// terms by the tap ratio, so with every tap at neutral the off-diagonal
/// blocks equal `-y` exactly.
pub fn assemble_admittance(grid: &GridModel, s: &DiscreteControllerState) -> Result<AdmittanceMatrix, GridError> {
    if let Some(defect) = validate(grid).into_iter().next() {
        return Err(defect.into());
    }
    grid.check_state(s)?;

    let nodes = NodeIndex::new(grid);
    let mut y = AdmittanceMatrix { nodes, entries: BTreeMap::new() };
    let ratios = line_tap_ratios(grid, s);

    for (line, ratio) in grid.lines.iter().zip(&ratios) {
        let phases = line.phases_present;
        for k in phases.iter() {
            for m in phases.iter() {
                let series = line.series_admittance.get(k, m);
                let half_shunt = line.shunt_susceptance.get(k, m) * 0.5;
                let (ak, am) = (ratio[k.index()], ratio[m.index()]);
                let fk = y.nodes.node(line.from_bus, k).expect("validated");
                let fm = y.nodes.node(line.from_bus, m).expect("validated");
                let tk = y.nodes.node(line.to_bus, k).expect("validated");
                let tm = y.nodes.node(line.to_bus, m).expect("validated");
                if ak == 1.0 && am == 1.0 {
                    y.add(fk, fm, series + half_shunt);
                    y.add(tk, tm, series + half_shunt);
                    y.add(fk, tm, -series);
                    y.add(tk, fm, -series);
                } else {
                    y.add(fk, fm, series * (ak * am) + half_shunt);
                    y.add(tk, tm, series + half_shunt);
                    y.add(fk, tm, -series * ak);
                    y.add(tk, fm, -series * am);
                }
            }
        }
    }

    for (cap, step) in grid.capacitors.iter().zip(&s.capacitor_steps) {
        let n = y.nodes.node(cap.bus, cap.phase).expect("validated");
        y.add(n, n, Complex64::new(0.0, cap.q_at_step(*step)));
    }
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::super::testing::single_phase_chain;
    use super::super::{CapacitorBank, LineSegment, PhaseMatrix, PhaseSet, VoltageRegulator};
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn two_bus_single_phase() {
        let g = single_phase_chain(&[c(1.0, -10.0)]);
        let y = assemble_admittance(&g, &g.controller_state()).unwrap();
        assert_eq!(y.dim(), 2);
        assert_eq!(y.get(0, 0), c(1.0, -10.0));
        assert_eq!(y.get(1, 1), c(1.0, -10.0));
        assert_eq!(y.get(0, 1), c(-1.0, 10.0));
        assert_eq!(y.get(1, 0), c(-1.0, 10.0));
    }

    #[test]
    fn capacitor_step_touches_only_its_diagonal() {
        let mut g = single_phase_chain(&[c(1.0, -10.0)]);
        g.capacitors.push(CapacitorBank {
            name: "c2".into(),
            bus: BusId(2),
            phase: Phase::A,
            step_susceptance: 0.5,
            num_steps: 1,
            current_step: 0,
        });
        let off = assemble_admittance(&g, &g.controller_state()).unwrap();
        let on_state = DiscreteControllerState { capacitor_steps: vec![1], regulator_taps: vec![] };
        let on = assemble_admittance(&g, &on_state).unwrap();
        assert_eq!(on.get(1, 1) - off.get(1, 1), c(0.0, 0.5));
        for (r, col) in [(0, 0), (0, 1), (1, 0)] {
            assert_eq!(on.get(r, col), off.get(r, col));
        }
    }

    #[test]
    fn absent_phases_get_no_nodes() {
        let mut g = single_phase_chain(&[c(1.0, -10.0)]);
        g.buses[0].phases = PhaseSet::ABC;
        let n = NodeIndex::new(&g);
        assert_eq!(n.len(), 4);
        assert_eq!(n.node(BusId(2), Phase::A), Some(3));
        assert_eq!(n.node(BusId(2), Phase::B), None);
    }

    #[test]
    fn line_charging_is_split_between_ends() {
        let mut g = single_phase_chain(&[c(1.0, -10.0)]);
        let a = PhaseSet::from_phases(&[Phase::A]);
        g.lines[0].shunt_susceptance = PhaseMatrix::diagonal(c(0.0, 0.2), a);
        let y = assemble_admittance(&g, &g.controller_state()).unwrap();
        assert_eq!(y.get(0, 0), c(1.0, -9.9));
        assert_eq!(y.get(1, 1), c(1.0, -9.9));
        assert_eq!(y.get(0, 1), c(-1.0, 10.0));
    }

    #[test]
    fn regulator_scales_from_side() {
        let mut g = single_phase_chain(&[c(1.0, -10.0)]);
        g.regulators.push(VoltageRegulator {
            name: "r".into(),
            line: 0,
            phase: Phase::A,
            bus: BusId(2),
            tap: 0,
            tap_range: (-16, 16),
            volts_per_tap: 0.00625,
            deadband: 0.01,
            target: 1.0,
        });
        let s = DiscreteControllerState { capacitor_steps: vec![], regulator_taps: vec![8] };
        let y = assemble_admittance(&g, &s).unwrap();
        let a = 1.05;
        let ys = c(1.0, -10.0);
        assert!((y.get(0, 0) - ys * (a * a)).norm() < 1e-12);
        assert!((y.get(0, 1) + ys * a).norm() < 1e-12);
        assert_eq!(y.get(1, 1), ys);
        // No current flows when the to side sits at a times the from side.
        let i = y.mul(&[c(1.0, 0.0), c(a, 0.0)]);
        assert!(i.iter().all(|v| v.norm() < 1e-12));
    }

    #[test]
    fn disconnected_grid_is_a_topology_error() {
        let mut g = single_phase_chain(&[c(1.0, -10.0), c(1.0, -10.0)]);
        g.lines.truncate(1);
        let err = assemble_admittance(&g, &g.controller_state()).unwrap_err();
        assert!(matches!(err, GridError::Topology(_)), "{err}");
    }

    #[test]
    fn phase_on_missing_bus_phase_is_a_model_error() {
        let mut g = single_phase_chain(&[c(1.0, -10.0)]);
        let ab = PhaseSet::parse("ab").unwrap();
        g.lines[0] = LineSegment {
            phases_present: ab,
            series_admittance: PhaseMatrix::diagonal(c(1.0, -10.0), ab),
            ..g.lines[0].clone()
        };
        let err = assemble_admittance(&g, &g.controller_state()).unwrap_err();
        assert!(matches!(err, GridError::Model(Defect::PhaseMismatch { .. })), "{err}");
    }

    use super::super::Defect;
}
