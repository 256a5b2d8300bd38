use serde::{Deserialize, Serialize};

use super::PowerFlowError;
use crate::grid::{BusId, Phase};

/// One polynomial term: `share * (v / v_nom)^exponent`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZipTerm {
    pub share: f64,
    pub exponent: f64,
}

/// Named voltage-dependence mix shared by many loads.
///
/// Shares of each polynomial must sum to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZipMix {
    pub name: String,
    pub p_terms: Vec<ZipTerm>,
    pub q_terms: Vec<ZipTerm>,
}

const SHARE_TOLERANCE: f64 = 1e-12;

impl ZipMix {
    pub fn new(name: &str, p_terms: Vec<ZipTerm>, q_terms: Vec<ZipTerm>) -> Result<Self, PowerFlowError> {
        for (label, terms) in [("p", &p_terms), ("q", &q_terms)] {
            if terms.is_empty() {
                return Err(PowerFlowError::InvalidLoad(format!("{name}: {label} terms are empty")));
            }
            if terms.iter().any(|t| !t.share.is_finite() || !t.exponent.is_finite()) {
                return Err(PowerFlowError::InvalidLoad(format!("{name}: non-finite {label} term")));
            }
            let total: f64 = terms.iter().map(|t| t.share).sum();
            if (total - 1.0).abs() > SHARE_TOLERANCE {
                return Err(PowerFlowError::InvalidLoad(format!("{name}: {label} shares sum to {total}")));
            }
        }
        Ok(ZipMix { name: name.to_string(), p_terms, q_terms })
    }

    fn single(name: &str, exponent: f64) -> Self {
        let t = vec![ZipTerm { share: 1.0, exponent }];
        ZipMix { name: name.to_string(), p_terms: t.clone(), q_terms: t }
    }

    pub fn constant_power() -> Self {
        Self::single("constant_power", 0.0)
    }

    pub fn constant_current() -> Self {
        Self::single("constant_current", 1.0)
    }

    pub fn constant_impedance() -> Self {
        Self::single("constant_impedance", 2.0)
    }
}

/// Evaluates `Σ share (ratio)^exponent / Σ share`.
///
/// Dividing by the share total keeps the value at `ratio == 1` bit-exact at
/// one even when the stored shares carry rounding.
pub(crate) fn polynomial(terms: &[ZipTerm], ratio: f64) -> f64 {
    let mut value = 0.0;
    let mut total = 0.0;
    for t in terms {
        value += t.share * ratio.powf(t.exponent);
        total += t.share;
    }
    value / total
}

/// Derivative of [`polynomial`] with respect to `ratio`.
pub(crate) fn polynomial_slope(terms: &[ZipTerm], ratio: f64) -> f64 {
    let mut value = 0.0;
    let mut total = 0.0;
    for t in terms {
        if t.exponent != 0.0 {
            value += t.share * t.exponent * ratio.powf(t.exponent - 1.0);
        }
        total += t.share;
    }
    value / total
}

/// Voltage-dependent consumption at one `(bus, phase)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadModel {
    pub bus: BusId,
    pub phase: Phase,
    /// Nominal active power, kW.
    pub p_nom: f64,
    /// Nominal reactive power, kvar.
    pub q_nom: f64,
    pub mix: ZipMix,
    /// Voltage at which nominal power is drawn, p.u.
    pub v_nom: f64,
    /// Profile class used by scenarios (residential, commercial, ...).
    pub class: Option<String>,
}

impl LoadModel {
    pub fn constant_power(bus: BusId, phase: Phase, p_kw: f64, q_kvar: f64) -> Self {
        LoadModel {
            bus,
            phase,
            p_nom: p_kw,
            q_nom: q_kvar,
            mix: ZipMix::constant_power(),
            v_nom: 1.0,
            class: None,
        }
    }

    /// Same load with nominal powers multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        LoadModel { p_nom: self.p_nom * factor, q_nom: self.q_nom * factor, ..self.clone() }
    }
}

/// Consumption `(P, Q)` in kW / kvar drawn by `model` at voltage `v` (p.u.).
pub fn expected_load(model: &LoadModel, v: f64) -> Result<(f64, f64), PowerFlowError> {
    if !(v > 0.0) || !v.is_finite() {
        return Err(PowerFlowError::Domain(format!("load voltage must be positive, got {v}")));
    }
    let ratio = v / model.v_nom;
    Ok((
        model.p_nom * polynomial(&model.mix.p_terms, ratio),
        model.q_nom * polynomial(&model.mix.q_terms, ratio),
    ))
}
