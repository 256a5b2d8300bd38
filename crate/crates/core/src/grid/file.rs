//! Grid description files.
//!
//! The format is TOML. Lines are given either by a named impedance
//! configuration (ohms and microsiemens per mile, full 3×3 phase matrices)
//! plus a length in feet, or directly by per-unit admittance matrices.
//! Transformers are entered by rating and percent impedance and become
//! per-phase series branches. See `data/ieee13.toml` for a complete example.

use std::collections::BTreeMap;
use std::path::Path;

use num_complex::Complex64;
use serde::Deserialize;

use super::{
    Bus, BusId, CapacitorBank, GeneratorKind, GeneratorSpec, GridError, GridModel, LineSegment, Phase, PhaseMatrix,
    PhaseSet, VoltageRegulator,
};
use crate::powerflow::{LoadModel, ZipMix, ZipTerm};

const FEET_PER_MILE: f64 = 5280.0;

/// A parsed grid file: the network plus the loads attached to it.
#[derive(Debug, Clone)]
pub struct GridCase {
    pub grid: GridModel,
    pub loads: Vec<LoadModel>,
}

type Matrix3 = [[f64; 3]; 3];

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFile {
    base: RawBase,
    substation: RawSubstation,
    #[serde(rename = "bus")]
    buses: Vec<RawBus>,
    #[serde(default)]
    line_config: BTreeMap<String, RawLineConfig>,
    #[serde(default, rename = "line")]
    lines: Vec<RawLine>,
    #[serde(default, rename = "transformer")]
    transformers: Vec<RawTransformer>,
    #[serde(default, rename = "regulator")]
    regulators: Vec<RawRegulator>,
    #[serde(default, rename = "capacitor")]
    capacitors: Vec<RawCapacitor>,
    #[serde(default, rename = "generator")]
    generators: Vec<RawGenerator>,
    #[serde(default)]
    zip: BTreeMap<String, RawZip>,
    #[serde(default, rename = "load")]
    loads: Vec<RawLoad>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBase {
    mva: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSubstation {
    bus: String,
    #[serde(default = "one")]
    voltage: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBus {
    name: String,
    phases: String,
    kv: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLineConfig {
    phases: String,
    r: Matrix3,
    x: Matrix3,
    #[serde(default)]
    b_us: Option<Matrix3>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLine {
    name: Option<String>,
    from: String,
    to: String,
    config: Option<String>,
    length_ft: Option<f64>,
    phases: Option<String>,
    g_pu: Option<Matrix3>,
    b_pu: Option<Matrix3>,
    shunt_b_pu: Option<Matrix3>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTransformer {
    name: Option<String>,
    from: String,
    to: String,
    #[serde(default = "abc")]
    phases: String,
    kva: f64,
    r_pct: f64,
    x_pct: f64,
}

fn abc() -> String {
    "abc".into()
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRegulator {
    name: String,
    line: String,
    phase: String,
    monitor: String,
    #[serde(default)]
    tap: i32,
    tap_min: i32,
    tap_max: i32,
    step: f64,
    deadband: f64,
    target: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCapacitor {
    name: String,
    bus: String,
    phase: String,
    kvar_per_step: f64,
    #[serde(default = "one_u32")]
    steps: u32,
    #[serde(default)]
    step: u32,
}

fn one_u32() -> u32 {
    1
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGenerator {
    name: String,
    bus: String,
    kind: GeneratorKind,
    kva: f64,
    kw: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawZip {
    p: Vec<[f64; 2]>,
    q: Vec<[f64; 2]>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLoad {
    bus: String,
    phase: String,
    kw: f64,
    kvar: f64,
    zip: String,
    class: Option<String>,
    #[serde(default = "one")]
    v_nom: f64,
}

fn err(msg: impl Into<String>) -> GridError {
    GridError::File(msg.into())
}

fn parse_phase(s: &str, ctx: &str) -> Result<Phase, GridError> {
    let mut chars = s.chars();
    match (chars.next().and_then(Phase::from_char), chars.next()) {
        (Some(p), None) => Ok(p),
        _ => Err(err(format!("{ctx}: bad phase {s:?}"))),
    }
}

fn parse_phases(s: &str, ctx: &str) -> Result<PhaseSet, GridError> {
    PhaseSet::parse(s).ok_or_else(|| err(format!("{ctx}: bad phase list {s:?}")))
}

impl GridCase {
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, GridError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| err(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, GridError> {
        let raw: RawFile = toml::from_str(text).map_err(|e| err(e.to_string()))?;
        build(raw)
    }
}

fn build(raw: RawFile) -> Result<GridCase, GridError> {
    let base_mva = raw.base.mva;
    if !(base_mva > 0.0) {
        return Err(err("base.mva must be positive"));
    }

    let mut buses = Vec::with_capacity(raw.buses.len());
    let mut ids: BTreeMap<String, BusId> = BTreeMap::new();
    for (i, b) in raw.buses.iter().enumerate() {
        let id = BusId(i + 1);
        if ids.insert(b.name.clone(), id).is_some() {
            return Err(err(format!("duplicate bus {}", b.name)));
        }
        buses.push(Bus { id, name: b.name.clone(), phases: parse_phases(&b.phases, &b.name)?, base_kv: b.kv });
    }
    let lookup = |name: &str, ctx: &str| -> Result<BusId, GridError> {
        ids.get(name).copied().ok_or_else(|| err(format!("{ctx}: unknown bus {name}")))
    };
    let zbase = |id: BusId| {
        let kv = buses[id.position()].base_kv;
        kv * kv / base_mva
    };

    let mut lines = Vec::new();
    for l in &raw.lines {
        let name = l.name.clone().unwrap_or_else(|| format!("{}-{}", l.from, l.to));
        let from = lookup(&l.from, &name)?;
        let to = lookup(&l.to, &name)?;
        let line = match (&l.config, &l.g_pu) {
            (Some(cfg_name), None) => {
                let cfg = raw
                    .line_config
                    .get(cfg_name)
                    .ok_or_else(|| err(format!("{name}: unknown line config {cfg_name}")))?;
                let length = l.length_ft.ok_or_else(|| err(format!("{name}: length_ft is required")))?;
                let miles = length / FEET_PER_MILE;
                let phases = parse_phases(&cfg.phases, cfg_name)?;
                let z_base = zbase(from);
                let z = PhaseMatrix::from_parts(cfg.r, cfg.x).scale(miles / z_base).restrict(phases);
                let series = z
                    .inverse_on(phases)
                    .ok_or_else(|| err(format!("{name}: singular impedance matrix")))?;
                let shunt = match cfg.b_us {
                    Some(b) => PhaseMatrix::from_parts([[0.0; 3]; 3], b).scale(1e-6 * miles * z_base).restrict(phases),
                    None => PhaseMatrix::zero(),
                };
                LineSegment {
                    name,
                    from_bus: from,
                    to_bus: to,
                    phases_present: phases,
                    series_admittance: series,
                    shunt_susceptance: shunt,
                }
            }
            (None, Some(g)) => {
                let phases = parse_phases(l.phases.as_deref().unwrap_or("abc"), &name)?;
                let b = l.b_pu.unwrap_or([[0.0; 3]; 3]);
                let shunt = l.shunt_b_pu.unwrap_or([[0.0; 3]; 3]);
                LineSegment {
                    name,
                    from_bus: from,
                    to_bus: to,
                    phases_present: phases,
                    series_admittance: PhaseMatrix::from_parts(*g, b).restrict(phases),
                    shunt_susceptance: PhaseMatrix::from_parts([[0.0; 3]; 3], shunt).restrict(phases),
                }
            }
            _ => return Err(err(format!("{name}: give exactly one of `config` or `g_pu`"))),
        };
        lines.push(line);
    }

    for t in &raw.transformers {
        let name = t.name.clone().unwrap_or_else(|| format!("{}-{}", t.from, t.to));
        let from = lookup(&t.from, &name)?;
        let to = lookup(&t.to, &name)?;
        let phases = parse_phases(&t.phases, &name)?;
        // Percent impedance on the transformer rating, moved to the system base.
        let z = Complex64::new(t.r_pct, t.x_pct) / 100.0 * (base_mva * 1000.0 / t.kva);
        lines.push(LineSegment {
            name,
            from_bus: from,
            to_bus: to,
            phases_present: phases,
            series_admittance: PhaseMatrix::diagonal(z.inv(), phases),
            shunt_susceptance: PhaseMatrix::zero(),
        });
    }

    let mut regulators = Vec::new();
    for r in &raw.regulators {
        let line = lines
            .iter()
            .position(|l| l.name == r.line)
            .ok_or_else(|| err(format!("regulator {}: unknown line {}", r.name, r.line)))?;
        regulators.push(VoltageRegulator {
            name: r.name.clone(),
            line,
            phase: parse_phase(&r.phase, &r.name)?,
            bus: lookup(&r.monitor, &r.name)?,
            tap: r.tap,
            tap_range: (r.tap_min, r.tap_max),
            volts_per_tap: r.step,
            deadband: r.deadband,
            target: r.target,
        });
    }

    let phase_base_kvar = base_mva * 1000.0 / 3.0;
    let mut capacitors = Vec::new();
    for c in &raw.capacitors {
        capacitors.push(CapacitorBank {
            name: c.name.clone(),
            bus: lookup(&c.bus, &c.name)?,
            phase: parse_phase(&c.phase, &c.name)?,
            step_susceptance: c.kvar_per_step / phase_base_kvar,
            num_steps: c.steps,
            current_step: c.step,
        });
    }

    let mut generators = Vec::new();
    for g in &raw.generators {
        let bus = lookup(&g.bus, &g.name)?;
        let mut spec = GeneratorSpec::renewable(&g.name, bus, g.kva, vec![g.kw]);
        spec.kind = g.kind;
        if g.kind == GeneratorKind::Dispatchable {
            spec.p_min = vec![0.0];
        }
        generators.push(spec);
    }

    let mut mixes = BTreeMap::new();
    for (name, z) in &raw.zip {
        let terms = |v: &[[f64; 2]]| v.iter().map(|[share, exponent]| ZipTerm { share: *share, exponent: *exponent }).collect();
        let mix = ZipMix::new(name, terms(&z.p), terms(&z.q)).map_err(|e| err(format!("zip {name}: {e}")))?;
        mixes.insert(name.clone(), mix);
    }

    let mut loads = Vec::new();
    for l in &raw.loads {
        let ctx = format!("load at {}", l.bus);
        let mix = match mixes.get(&l.zip) {
            Some(m) => m.clone(),
            None => builtin_mix(&l.zip).ok_or_else(|| err(format!("{ctx}: unknown zip mix {}", l.zip)))?,
        };
        loads.push(LoadModel {
            bus: lookup(&l.bus, &ctx)?,
            phase: parse_phase(&l.phase, &ctx)?,
            p_nom: l.kw,
            q_nom: l.kvar,
            mix,
            v_nom: l.v_nom,
            class: l.class.clone(),
        });
    }

    let grid = GridModel {
        base_mva,
        slack_bus: lookup(&raw.substation.bus, "substation")?,
        slack_voltage: raw.substation.voltage,
        buses,
        lines,
        capacitors,
        regulators,
        generators,
    };
    for load in &loads {
        let bus = grid.bus(load.bus).expect("looked up");
        if !bus.phases.contains(load.phase) {
            return Err(err(format!("load on {}.{}: phase not present", bus.name, load.phase)));
        }
    }
    Ok(GridCase { grid, loads })
}

fn builtin_mix(name: &str) -> Option<ZipMix> {
    match name {
        "constant_power" | "pq" => Some(ZipMix::constant_power()),
        "constant_current" | "i" => Some(ZipMix::constant_current()),
        "constant_impedance" | "z" => Some(ZipMix::constant_impedance()),
        _ => None,
    }
}
