//! Power-quality control for active distribution feeders.
//!
//! `gridpq` couples an unbalanced Newton-Raphson power flow with Markov-chain
//! forecasts of solar output and load, splits the solar forecast error into
//! slow and fast components for storage sizing, and runs a two-timescale
//! Volt/VAR controller (hourly capacitor switching, per-minute smart-inverter
//! and flexible-load dispatch) against a unity-power-factor baseline.
//!
//! The modules map one-to-one onto the simulation pipeline:
//!
//! * [`grid`] — network model, grid files, admittance assembly.
//! * [`powerflow`] — injections, mismatch, Jacobian, Newton solve, losses.
//! * [`markov`] — fitting, simulating and forecasting finite-state chains.
//! * [`signal`] — difference signal, sigmoid moving-average split, ESS sizing.
//! * [`control`] — fast/slow Volt/VAR decisions, regulators, quality metrics.
//! * [`scenario`] — day-long runs, reports and comparisons.
//!
//! A guide with worked examples lives in the `book/` directory of the
//! repository; its code listings are compiled as doc-tests of this crate.

pub mod control;
pub mod grid;
pub mod markov;
pub mod powerflow;
pub mod scenario;
pub mod signal;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/grid.md")]
    mod grid {}
    #[doc = include_str!("../../../book/src/power_flow.md")]
    mod power_flow {}
    #[doc = include_str!("../../../book/src/forecasting.md")]
    mod forecasting {}
    #[doc = include_str!("../../../book/src/decomposition.md")]
    mod decomposition {}
    #[doc = include_str!("../../../book/src/voltvar.md")]
    mod voltvar {}
    #[doc = include_str!("../../../book/src/scenarios.md")]
    mod scenarios {}
}
