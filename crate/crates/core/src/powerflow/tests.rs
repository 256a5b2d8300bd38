use num_complex::Complex64;
use proptest::prelude::*;

use super::*;
use crate::grid::testing::single_phase_chain;
use crate::grid::{Phase, PhaseMatrix, PhaseSet};

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// Phase base is 1000 kW for the test chains, so kW / 1000 = p.u.
fn pq_load(bus: usize, p_pu: f64, q_pu: f64) -> LoadModel {
    LoadModel::constant_power(BusId(bus), Phase::A, p_pu * 1000.0, q_pu * 1000.0)
}

fn zip_load(bus: usize, p_pu: f64, q_pu: f64) -> LoadModel {
    let mix = ZipMix::new(
        "zip",
        vec![
            ZipTerm { share: 0.4, exponent: 0.0 },
            ZipTerm { share: 0.3, exponent: 1.0 },
            ZipTerm { share: 0.3, exponent: 2.0 },
        ],
        vec![ZipTerm { share: 0.5, exponent: 0.0 }, ZipTerm { share: 0.5, exponent: 1.7 }],
    )
    .unwrap();
    LoadModel { mix, ..pq_load(bus, p_pu, q_pu) }
}

/// Central differences of `-mismatch` with respect to the packed unknowns.
fn fd_jacobian(net: &Network<'_>, state: &SystemState, loads: &[LoadModel], gens: &[GeneratorDispatch], h: f64) -> DenseMatrix {
    let layout = net.layout(gens);
    let x0 = layout.pack(state);
    let n = x0.len();
    let mut jac = DenseMatrix::zeros(n);
    for col in 0..n {
        let eval = |delta: f64| {
            let mut x = x0.clone();
            x[col] += delta;
            let mut s = state.clone();
            layout.unpack(&x, &mut s);
            let m = net.mismatch(&s, loads, gens).unwrap();
            m.dp.iter().chain(&m.dq).copied().collect::<Vec<f64>>()
        };
        let plus = eval(h);
        let minus = eval(-h);
        for row in 0..n {
            jac.set(row, col, -(plus[row] - minus[row]) / (2.0 * h));
        }
    }
    jac
}

fn max_rel_error(a: &DenseMatrix, b: &DenseMatrix) -> f64 {
    let mut worst: f64 = 0.0;
    for r in 0..a.dim() {
        for col in 0..a.dim() {
            let (x, y) = (a.get(r, col), b.get(r, col));
            let scale = x.abs().max(y.abs());
            if scale > 0.0 {
                worst = worst.max((x - y).abs() / scale.max(1e-6));
            }
        }
    }
    worst
}

#[test]
fn flat_profile_on_lossless_line_has_no_injection() {
    let g = single_phase_chain(&[c(0.0, -10.0)]);
    let y = assemble_admittance(&g, &g.controller_state()).unwrap();
    let net = Network::new(&g, &g.controller_state()).unwrap();
    let (p, q) = injected_power(&net.flat_state(), &y);
    assert_eq!(p, vec![0.0, 0.0]);
    assert_eq!(q, vec![0.0, 0.0]);
}

#[test]
fn injections_match_complex_power() {
    let g = single_phase_chain(&[c(1.0, -10.0)]);
    let y = assemble_admittance(&g, &g.controller_state()).unwrap();
    let state = SystemState { v: vec![1.0, 0.95], theta: vec![0.0, -0.05] };
    let (p, q) = injected_power(&state, &y);
    // S = V · conj(Y V) computed with complex arithmetic.
    let v = [Complex64::from_polar(1.0, 0.0), Complex64::from_polar(0.95, -0.05)];
    let yd = [[c(1.0, -10.0), c(-1.0, 10.0)], [c(-1.0, 10.0), c(1.0, -10.0)]];
    for i in 0..2 {
        let current = yd[i][0] * v[0] + yd[i][1] * v[1];
        let s = v[i] * current.conj();
        assert!((p[i] - s.re).abs() < 1e-12, "P{i}");
        assert!((q[i] - s.im).abs() < 1e-12, "Q{i}");
    }
    let net = Network::new(&g, &g.controller_state()).unwrap();
    let (p2, q2) = net.injections(&state);
    for i in 0..2 {
        assert!((p2[i] - p[i]).abs() < 1e-12 && (q2[i] - q[i]).abs() < 1e-12);
    }
}

#[test]
fn zero_load_flat_start_has_zero_mismatch() {
    let g = single_phase_chain(&[c(1.0, -10.0), c(2.0, -8.0)]);
    let net = Network::new(&g, &g.controller_state()).unwrap();
    let m = net.mismatch(&net.flat_state(), &[], &[]).unwrap();
    assert!(m.dp.iter().chain(&m.dq).all(|v| *v == 0.0));
}

#[test]
fn constant_power_load_at_flat_start() {
    let g = single_phase_chain(&[c(0.0, -10.0)]);
    let net = Network::new(&g, &g.controller_state()).unwrap();
    let loads = [LoadModel::constant_power(BusId(2), Phase::A, 100.0, 0.0)];
    let m = net.mismatch(&net.flat_state(), &loads, &[]).unwrap();
    assert_eq!(m.dp, vec![-0.1]);
    assert_eq!(m.dq, vec![0.0]);
}

#[test]
fn diagonal_angle_derivative_on_two_buses() {
    let g = single_phase_chain(&[c(1.0, -10.0)]);
    let net = Network::new(&g, &g.controller_state()).unwrap();
    let state = SystemState { v: vec![1.0, 0.97], theta: vec![0.0, -0.03] };
    let jac = net.jacobian(&state, &[], &[]).unwrap();
    // Hand algebra: P2 = V2² G22 + V2 V1 (G21 cos θ21 + B21 sin θ21),
    // Q2 = -V2² B22 + V2 V1 (G21 sin θ21 - B21 cos θ21), θ21 = θ2 - θ1.
    let (v1, v2, t21) = (1.0f64, 0.97f64, -0.03f64);
    let (g21, b21, b22) = (-1.0, 10.0, -10.0);
    let q2 = -v2 * v2 * b22 + v2 * v1 * (g21 * t21.sin() - b21 * t21.cos());
    let expected = -v2 * v2 * b22 - q2;
    assert!((jac.get(0, 0) - expected).abs() < 1e-12);
    // Same as V2 V1 (-G21 sin θ21 + B21 cos θ21).
    assert!((jac.get(0, 0) - v2 * v1 * (b21 * t21.cos() - g21 * t21.sin())).abs() < 1e-12);
}

#[test]
fn jacobian_matches_finite_differences_on_small_grids() {
    let g = single_phase_chain(&[c(1.0, -10.0), c(3.0, -7.0), c(0.5, -4.0)]);
    let net = Network::new(&g, &g.controller_state()).unwrap();
    let loads = [zip_load(2, 0.3, 0.1), zip_load(4, 0.2, 0.05), pq_load(3, 0.1, -0.02)];
    let state = SystemState { v: vec![1.0, 0.97, 0.95, 0.93], theta: vec![0.0, -0.02, -0.04, -0.07] };
    let analytic = net.jacobian(&state, &loads, &[]).unwrap();
    let numeric = fd_jacobian(&net, &state, &loads, &[], 1e-6);
    assert!(max_rel_error(&analytic, &numeric) < 1e-5);
    // Buses 2 and 4 are not adjacent: their coupling entries vanish exactly.
    let layout = net.layout(&[]);
    let t2 = layout.theta_nodes.iter().position(|&n| n == 1).unwrap();
    let t4 = layout.theta_nodes.iter().position(|&n| n == 3).unwrap();
    assert_eq!(analytic.get(t2, t4), 0.0);
    assert_eq!(analytic.get(t4, t2), 0.0);
}

fn closed_form_v2(r: f64, x: f64, p: f64, q: f64) -> f64 {
    let b = 1.0 - 2.0 * (r * p + x * q);
    let disc = b * b - 4.0 * (r * r + x * x) * (p * p + q * q);
    ((b + disc.sqrt()) / 2.0).sqrt()
}

#[test]
fn two_bus_matches_closed_form() {
    let z = c(0.01, 0.1);
    let g = single_phase_chain(&[z.inv()]);
    let loads = [pq_load(2, 0.5, 0.2)];
    let opts = SolverOptions { tolerance: 1e-12, ..Default::default() };
    let sol = solve(&g, &g.controller_state(), &loads, &[], &opts).unwrap();
    let v2 = closed_form_v2(0.01, 0.1, 0.5, 0.2);
    assert!((sol.state.v[1] - v2).abs() < 1e-8, "{} vs {v2}", sol.state.v[1]);
    let hist = sol.residual_history();
    assert!(hist.last().unwrap() < hist.first().unwrap());
}

#[test]
fn zero_load_returns_flat_profile_in_one_iteration() {
    let g = single_phase_chain(&[c(1.0, -10.0), c(1.0, -5.0)]);
    let sol = solve(&g, &g.controller_state(), &[], &[], &SolverOptions::default()).unwrap();
    assert_eq!(sol.iterations, 1);
    assert_eq!(sol.state.v, vec![1.0; 3]);
    assert_eq!(sol.state.theta, vec![0.0; 3]);
    let losses = technical_losses(&sol.state, &g, &g.controller_state()).unwrap();
    assert_eq!(losses.total_kw, 0.0);
}

#[test]
fn losses_follow_ohms_law_and_balance() {
    let z = c(0.01, 0.1);
    let g = single_phase_chain(&[z.inv()]);
    let loads = [pq_load(2, 0.5, 0.2)];
    let opts = SolverOptions { tolerance: 1e-12, ..Default::default() };
    let net = Network::new(&g, &g.controller_state()).unwrap();
    let sol = net.solve(&loads, &[], &opts, None).unwrap();
    let v1 = sol.state.phasor(0);
    let v2 = sol.state.phasor(1);
    let i = (v1 - v2) / z;
    let ohmic = z.re * i.norm_sqr() * 1000.0;
    let losses = net.technical_losses(&sol.state);
    assert!((losses.total_kw - ohmic).abs() < 1e-8);
    // Generation - load - losses.
    let load_kw = net.total_load_kw(&sol.state, &loads).unwrap();
    assert!((sol.slack_kw - load_kw - losses.total_kw).abs() < 1e-8);
}

#[test]
fn higher_voltage_means_lower_losses() {
    let z = c(0.02, 0.08);
    let mut g = single_phase_chain(&[z.inv()]);
    let loads = [pq_load(2, 0.4, 0.1)];
    let mut prev = f64::INFINITY;
    for vs in [0.98, 1.0, 1.02, 1.05] {
        g.slack_voltage = vs;
        let sol = solve(&g, &g.controller_state(), &loads, &[], &SolverOptions::default()).unwrap();
        let l = technical_losses(&sol.state, &g, &g.controller_state()).unwrap().total_kw;
        assert!(l < prev);
        prev = l;
    }
}

#[test]
fn iteration_limit_reports_history() {
    let g = single_phase_chain(&[c(0.01, 0.1).inv()]);
    let loads = [pq_load(2, 0.5, 0.2)];
    let opts = SolverOptions { max_iterations: 2, tolerance: 1e-14, ..Default::default() };
    match solve(&g, &g.controller_state(), &loads, &[], &opts) {
        Err(PowerFlowError::NonConvergence { iterations, history }) => {
            assert_eq!(iterations, 2);
            assert_eq!(history.len(), 2);
        }
        other => panic!("expected non-convergence, got {other:?}"),
    }
}

#[test]
fn infeasible_load_does_not_converge() {
    let g = single_phase_chain(&[c(0.01, 0.1).inv()]);
    let loads = [pq_load(2, 8.0, 4.0)];
    assert!(solve(&g, &g.controller_state(), &loads, &[], &SolverOptions::default()).is_err());
}

#[test]
fn open_line_gives_singular_jacobian() {
    let mut g = single_phase_chain(&[c(1.0, -10.0), c(1.0, -10.0)]);
    let a = PhaseSet::from_phases(&[Phase::A]);
    g.lines[1].series_admittance = PhaseMatrix::diagonal(c(0.0, 0.0), a);
    let loads = [pq_load(3, 0.1, 0.0)];
    let err = solve(&g, &g.controller_state(), &loads, &[], &SolverOptions::default()).unwrap_err();
    match err {
        PowerFlowError::SingularJacobian { unknown, .. } => assert!(unknown.contains("3.a"), "{unknown}"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn bad_options_are_rejected() {
    let g = single_phase_chain(&[c(1.0, -10.0)]);
    let bad = SolverOptions { tolerance: 0.0, ..Default::default() };
    assert!(matches!(solve(&g, &g.controller_state(), &[], &[], &bad), Err(PowerFlowError::Options(_))));
    let bad = SolverOptions { max_iterations: 0, ..Default::default() };
    assert!(matches!(solve(&g, &g.controller_state(), &[], &[], &bad), Err(PowerFlowError::Options(_))));
}

#[test]
fn voltage_controlled_bus_then_fixed_injection_agree() {
    let g = single_phase_chain(&[c(0.02, 0.1).inv()]);
    let loads = [pq_load(2, 0.4, 0.2)];
    let opts = SolverOptions { tolerance: 1e-10, ..Default::default() };
    let pv = [GeneratorDispatch { bus: BusId(2), p_kw: 0.0, q_kvar: 0.0, control: BusControl::Pv { voltage: 1.0 } }];
    let sol = solve(&g, &g.controller_state(), &loads, &pv, &opts).unwrap();
    assert_eq!(sol.state.v[1], 1.0);
    let (_, q_needed) = sol.pv_reactive_kvar[0];
    assert!(q_needed > 200.0, "must at least cover the load's 200 kvar, got {q_needed}");
    let pq = [GeneratorDispatch::pq(BusId(2), 0.0, q_needed)];
    let sol2 = solve(&g, &g.controller_state(), &loads, &pq, &opts).unwrap();
    assert!((sol2.state.v[1] - 1.0).abs() < 1e-8);
}

#[test]
fn warm_start_reaches_same_solution() {
    let g = single_phase_chain(&[c(1.0, -8.0), c(2.0, -6.0)]);
    let loads = [zip_load(2, 0.2, 0.1), zip_load(3, 0.15, 0.05)];
    let net = Network::new(&g, &g.controller_state()).unwrap();
    let tight = SolverOptions { tolerance: 1e-12, ..Default::default() };
    let flat = net.solve(&loads, &[], &tight, None).unwrap();
    let mut start = flat.state.clone();
    start.v[2] *= 0.97;
    start.theta[1] += 0.01;
    let warm = net.solve(&loads, &[], &SolverOptions { flat_start: false, ..tight }, Some(&start)).unwrap();
    for (a, b) in flat.state.v.iter().zip(&warm.state.v) {
        assert!((a - b).abs() < 1e-10);
    }
}

#[test]
fn trace_csv_has_one_row_per_evaluation() {
    let g = single_phase_chain(&[c(0.01, 0.1).inv()]);
    let sol = solve(&g, &g.controller_state(), &[pq_load(2, 0.3, 0.1)], &[], &SolverOptions::default()).unwrap();
    let csv = sol.trace_csv();
    assert_eq!(csv.lines().count(), sol.iterations + 1);
    assert!(csv.starts_with("iteration,dp_inf,dq_inf\n0,"));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn jacobian_agrees_with_finite_differences(
        dv in proptest::collection::vec(-0.08f64..0.08, 3),
        dt in proptest::collection::vec(-0.1f64..0.1, 3),
        p in 0.0f64..0.5,
    ) {
        let g = single_phase_chain(&[c(1.0, -10.0), c(3.0, -7.0), c(0.5, -4.0)]);
        let net = Network::new(&g, &g.controller_state()).unwrap();
        let loads = [zip_load(2, p, p / 3.0), zip_load(4, 0.2, 0.05)];
        let mut state = net.flat_state();
        for k in 0..3 {
            state.v[k + 1] += dv[k];
            state.theta[k + 1] += dt[k];
        }
        let analytic = net.jacobian(&state, &loads, &[]).unwrap();
        let numeric = fd_jacobian(&net, &state, &loads, &[], 1e-6);
        prop_assert!(max_rel_error(&analytic, &numeric) < 1e-5);
    }
}
