use std::path::PathBuf;

use gridpq::grid::file::GridCase;
use gridpq::grid::{assemble_admittance, validate, GridModel, NodeIndex, Phase};
use gridpq::powerflow::{self, Network, SolverOptions};
use nalgebra::DMatrix;
use num_complex::Complex64;

fn ieee13() -> GridCase {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data/ieee13.toml");
    GridCase::from_path(path).unwrap()
}

/// `Y = Aᵀ · Y_prim · A`, one primitive block per branch, built densely.
fn primitive_assembly(grid: &GridModel, taps: &[i32]) -> DMatrix<Complex64> {
    let nodes = NodeIndex::new(grid);
    let n = nodes.len();
    let mut y = DMatrix::<Complex64>::zeros(n, n);
    for (li, line) in grid.lines.iter().enumerate() {
        let phases: Vec<Phase> = line.phases_present.iter().collect();
        let k = phases.len();
        let mut ratio = vec![1.0; k];
        for (r, reg) in grid.regulators.iter().enumerate() {
            if reg.line == li {
                let pos = phases.iter().position(|p| *p == reg.phase).unwrap();
                ratio[pos] = 1.0 + reg.volts_per_tap * taps[r] as f64;
            }
        }
        // Incidence: 2k branch terminals onto n nodes, with the tap on the from side.
        let mut a = DMatrix::<Complex64>::zeros(2 * k, n);
        for (i, p) in phases.iter().enumerate() {
            a[(i, nodes.node(line.from_bus, *p).unwrap())] = Complex64::new(ratio[i], 0.0);
            a[(k + i, nodes.node(line.to_bus, *p).unwrap())] = Complex64::new(1.0, 0.0);
        }
        let mut prim = DMatrix::<Complex64>::zeros(2 * k, 2 * k);
        for (i, p) in phases.iter().enumerate() {
            for (j, q) in phases.iter().enumerate() {
                let ys = line.series_admittance.get(*p, *q);
                let half = line.shunt_susceptance.get(*p, *q) * 0.5;
                prim[(i, j)] = ys;
                prim[(k + i, k + j)] = ys;
                prim[(i, k + j)] = -ys;
                prim[(k + i, j)] = -ys;
                // Charging sits outside the ideal tap, at the bus itself.
                let fi = nodes.node(line.from_bus, *p).unwrap();
                let fj = nodes.node(line.from_bus, *q).unwrap();
                let ti = nodes.node(line.to_bus, *p).unwrap();
                let tj = nodes.node(line.to_bus, *q).unwrap();
                y[(fi, fj)] += half;
                y[(ti, tj)] += half;
            }
        }
        y += a.transpose() * prim * a;
    }
    for cap in &grid.capacitors {
        let i = nodes.node(cap.bus, cap.phase).unwrap();
        y[(i, i)] += Complex64::new(0.0, cap.step_susceptance * cap.current_step as f64);
    }
    y
}

#[test]
fn bundled_feeder_is_well_formed() {
    let case = ieee13();
    assert!(validate(&case.grid).is_empty());
    assert_eq!(case.grid.buses.len(), 11);
    let total: f64 = case.loads.iter().map(|l| l.p_nom).sum();
    assert!((total - 3466.0).abs() < 1e-9, "{total}");
}

#[test]
fn admittance_matches_primitive_assembly() {
    let mut case = ieee13();
    for cap in case.grid.capacitors.iter_mut() {
        cap.current_step = 1;
    }
    let mut s = case.grid.controller_state();
    s.regulator_taps = vec![3, -2, 7];
    for (r, t) in case.grid.regulators.iter_mut().zip(&s.regulator_taps) {
        r.tap = *t;
    }
    let y = assemble_admittance(&case.grid, &s).unwrap();
    let oracle = primitive_assembly(&case.grid, &s.regulator_taps);
    let scale = oracle.iter().map(|v| v.norm()).fold(0.0, f64::max);
    for r in 0..y.dim() {
        for c in 0..y.dim() {
            assert!((y.get(r, c) - oracle[(r, c)]).norm() <= 1e-12 * scale, "({r},{c})");
        }
    }
}

#[test]
fn base_case_converges_quickly_and_balances() {
    let case = ieee13();
    let s = case.grid.controller_state();
    let net = Network::new(&case.grid, &s).unwrap();
    let sol = net.solve(&case.loads, &[], &SolverOptions::default(), None).unwrap();
    assert!(sol.iterations <= 15, "{} iterations", sol.iterations);
    assert!(*sol.residual_history().last().unwrap() < 1e-6);
    let losses = net.technical_losses(&sol.state).total_kw;
    let load = net.total_load_kw(&sol.state, &case.loads).unwrap();
    let base = case.grid.phase_base_kw();
    assert!((sol.slack_kw - load - losses).abs() / base < 1e-5);
    for v in &sol.state.v {
        assert!(*v > 0.84 && *v <= 1.0, "{v}");
    }
}

#[test]
fn warm_start_agrees_with_flat_start() {
    let case = ieee13();
    let s = case.grid.controller_state();
    let net = Network::new(&case.grid, &s).unwrap();
    let tight = SolverOptions { tolerance: 1e-11, ..Default::default() };
    let flat = net.solve(&case.loads, &[], &tight, None).unwrap();
    let mut start = flat.state.clone();
    for (i, v) in start.v.iter_mut().enumerate() {
        *v *= 1.0 + 0.01 * ((i % 5) as f64 - 2.0);
    }
    let warm_opts = SolverOptions { flat_start: false, ..tight };
    let warm = net.solve(&case.loads, &[], &warm_opts, Some(&start)).unwrap();
    for (a, b) in flat.state.v.iter().zip(&warm.state.v) {
        assert!((a - b).abs() < 1e-8);
    }
    for (a, b) in flat.state.theta.iter().zip(&warm.state.theta) {
        assert!((a - b).abs() < 1e-8);
    }
}

#[test]
fn losses_follow_ohms_law_on_every_line() {
    let case = ieee13();
    let s = case.grid.controller_state();
    let net = Network::new(&case.grid, &s).unwrap();
    let sol = net.solve(&case.loads, &[], &SolverOptions { tolerance: 1e-10, ..Default::default() }, None).unwrap();
    let report = powerflow::technical_losses(&sol.state, &case.grid, &s).unwrap();
    let nodes = net.nodes();
    let base = case.grid.phase_base_kw();
    for (line, loss) in case.grid.lines.iter().zip(&report.lines) {
        // Branch loss = Re(ΔVᴴ · Y · ΔV) over all phases (no taps at state 0).
        let phases: Vec<Phase> = line.phases_present.iter().collect();
        let dv: Vec<Complex64> = phases
            .iter()
            .map(|p| sol.state.phasor(nodes.node(line.from_bus, *p).unwrap()) - sol.state.phasor(nodes.node(line.to_bus, *p).unwrap()))
            .collect();
        let mut total = Complex64::new(0.0, 0.0);
        for (i, p) in phases.iter().enumerate() {
            for (j, q) in phases.iter().enumerate() {
                total += dv[i] * (line.series_admittance.get(*p, *q) * dv[j]).conj();
            }
        }
        let sum: f64 = loss.per_phase_kw.iter().sum();
        assert!((sum - total.re * base).abs() < 1e-9 * base, "{}", line.name);
        assert!(sum >= 0.0);
    }
}
