//! Command-line front end for `gridpq`.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context as _, Result};
use clap::{Parser, Subcommand, ValueEnum};
use gridpq::grid::file::GridCase;
use gridpq::markov::{self, Context, FittedModel, Label, MarkovModel, SolarModelSet};
use gridpq::powerflow::{Network, SolverOptions};
use gridpq::scenario::{self, Mode, RunReport, ScenarioConfig, ScenarioError};
use gridpq::signal::{self, FilterWeights};

#[derive(Parser)]
#[command(name = "gridpq", version, about = "Distribution feeder power flow, forecasting and volt/VAR control")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one power flow and print node voltages as CSV.
    Powerflow {
        #[arg(long)]
        grid: PathBuf,
        /// Write the per-iteration residual trace here.
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long, default_value_t = 1e-6)]
        tolerance: f64,
        #[arg(long, default_value_t = 25)]
        max_iterations: usize,
    },
    /// Fit a Markov model to a `timestamp,value` history.
    Fit {
        #[arg(long)]
        series: PathBuf,
        #[arg(long, default_value_t = 10)]
        states: usize,
        #[arg(long, value_enum, default_value_t = Kind::Load)]
        kind: Kind,
        /// Restrict the fit to one month (1-12).
        #[arg(long)]
        month: Option<u32>,
        /// With --month, restrict a load fit to weekdays or weekends.
        #[arg(long, value_enum)]
        day: Option<Day>,
        /// Output model file; one file per month for solar without --month.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Expected value k hours ahead from a fitted model.
    Forecast {
        #[arg(long)]
        model: PathBuf,
        /// Current state (1 is the top of the range).
        #[arg(long)]
        state: usize,
        #[arg(long, default_value_t = 1)]
        steps: usize,
        /// Hour of day the forecast is for.
        #[arg(long)]
        hour: usize,
    },
    /// Split a forecast error into slow and fast parts and size storage.
    Decompose {
        #[arg(long)]
        forecast: PathBuf,
        #[arg(long)]
        measured: PathBuf,
        /// Sample spacing in hours; inferred from the timestamps by default.
        #[arg(long)]
        dt_hours: Option<f64>,
        /// Directory for `signals.csv`.
        #[arg(long, env = "GRIDPQ_OUT")]
        out: Option<PathBuf>,
    },
    /// Run a day-long scenario and write its report.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        mode: Option<CliMode>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, env = "GRIDPQ_OUT", default_value = "out")]
        out: PathBuf,
    },
    /// Compare two report directories.
    Compare {
        a: PathBuf,
        b: PathBuf,
        /// Directory for `comparison.csv`.
        #[arg(long, env = "GRIDPQ_OUT")]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Solar,
    Load,
}

#[derive(Clone, Copy, ValueEnum)]
enum Day {
    Weekday,
    Weekend,
}

#[derive(Clone, Copy, ValueEnum)]
enum CliMode {
    Baseline,
    FastControl,
}

/// Bad invocation: reported like a clap error, exit status 2.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn existing(path: &Path) -> Result<&Path> {
    if !path.exists() {
        return Err(Usage(format!("no such file or directory: {}", path.display())).into());
    }
    Ok(path)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is::<Usage>() => {
            eprintln!("error: {}", one_line(&e.to_string()));
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {}", one_line(&format!("{e:#}")));
            ExitCode::FAILURE
        }
    }
}

/// Parser errors span several lines; diagnostics are kept to one.
fn one_line(message: &str) -> String {
    message.lines().map(str::trim).filter(|l| !l.is_empty() && *l != "|").collect::<Vec<_>>().join(" ")
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Powerflow { grid, trace, tolerance, max_iterations } => {
            let case = GridCase::from_path(existing(&grid)?)?;
            let s = case.grid.controller_state();
            let net = Network::new(&case.grid, &s)?;
            let opts = SolverOptions { tolerance, max_iterations, ..Default::default() };
            let sol = net.solve(&case.loads, &[], &opts, None)?;
            if let Some(path) = trace {
                std::fs::write(&path, sol.trace_csv()).with_context(|| path.display().to_string())?;
            }
            println!("node,v_pu,angle_deg");
            for (i, _, _) in net.nodes().iter() {
                println!("{},{:.6},{:.4}", net.label(i), sol.state.v[i], sol.state.theta[i].to_degrees());
            }
            let losses = net.technical_losses(&sol.state).total_kw;
            eprintln!(
                "converged in {} iterations; substation {:.1} kW {:.1} kvar; losses {:.2} kW",
                sol.iterations, sol.slack_kw, sol.slack_kvar, losses
            );
        }
        Command::Fit { series, states, kind, month, day, out } => {
            let samples = markov::read_series(existing(&series)?)?;
            match (kind, month) {
                (Kind::Solar, None) => {
                    let set = SolarModelSet::fit(&samples, states)?;
                    let dir = out.unwrap_or_else(|| PathBuf::from("."));
                    std::fs::create_dir_all(&dir).with_context(|| dir.display().to_string())?;
                    for m in set.months() {
                        let path = dir.join(format!("solar_{m:02}.toml"));
                        let fitted = set.month(m).expect("listed month");
                        std::fs::write(&path, fitted.to_toml()).with_context(|| path.display().to_string())?;
                        println!("{}", path.display());
                    }
                }
                _ => {
                    let label = match kind {
                        Kind::Solar => Label::Solar,
                        Kind::Load => Label::Load,
                    };
                    let context = match (month, day) {
                        (None, None) => Context::Any,
                        (None, Some(_)) => bail!(Usage("--day needs --month".into())),
                        (Some(m), None) => Context::Month { month: m },
                        (Some(m), Some(d)) => Context::DayType { weekday: matches!(d, Day::Weekday), month: m },
                    };
                    let (model, range) = MarkovModel::fit(&samples, states, label, context)?;
                    let text = FittedModel { model, range }.to_toml();
                    match out {
                        Some(path) => std::fs::write(&path, text).with_context(|| path.display().to_string())?,
                        None => print!("{text}"),
                    }
                }
            }
        }
        Command::Forecast { model, state, steps, hour } => {
            let fitted = FittedModel::load(existing(&model)?)?;
            let value = fitted.model.forecast(&fitted.range, state, steps, hour)?;
            println!("{value}");
        }
        Command::Decompose { forecast, measured, dt_hours, out } => {
            let f = markov::read_series(existing(&forecast)?)?;
            let m = markov::read_series(existing(&measured)?)?;
            let dt = match dt_hours {
                Some(dt) => dt,
                None => match m.as_slice() {
                    [a, b, ..] => (b.time - a.time).num_seconds() as f64 / 3600.0,
                    _ => bail!("cannot infer the sample spacing from fewer than two samples; pass --dt-hours"),
                },
            };
            let fv: Vec<f64> = f.iter().map(|s| s.value).collect();
            let mv: Vec<f64> = m.iter().map(|s| s.value).collect();
            let d = signal::difference_signal(&fv, &mv)?;
            let parts = signal::split(&d, &FilterWeights::sigmoid());
            let total = signal::signal_energy(&d, dt)?;
            let fast = signal::signal_energy(&parts.d_h, dt)?;
            let ess = signal::ess_capacity_for_signal(&parts.d_h, dt)?;
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir).with_context(|| dir.display().to_string())?;
                let path = dir.join("signals.csv");
                let mut w = csv::Writer::from_path(&path).with_context(|| path.display().to_string())?;
                w.write_record(["timestamp", "d", "d_l", "d_h"])?;
                for (t, s) in m.iter().enumerate() {
                    w.write_record([
                        s.time.format("%Y-%m-%d %H:%M:%S").to_string(),
                        parts.d[t].to_string(),
                        parts.d_l[t].to_string(),
                        parts.d_h[t].to_string(),
                    ])?;
                }
                w.flush()?;
            }
            println!("metric,value");
            println!("difference_energy_kwh,{}", total.absolute_kwh);
            println!("fast_signed_energy_kwh,{}", fast.signed_kwh);
            println!("fast_energy_kwh,{}", fast.absolute_kwh);
            println!("ess_capacity_kwh,{}", ess.capacity_kwh);
            println!("ess_max_ramp_kw,{}", ess.max_ramp_kw);
        }
        Command::Simulate { config, mode, seed, out } => {
            let mut cfg = ScenarioConfig::load(existing(&config)?)?;
            if let Some(m) = mode {
                cfg.mode = match m {
                    CliMode::Baseline => Mode::Baseline,
                    CliMode::FastControl => Mode::FastControl,
                };
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            match scenario::run_to_dir(&cfg, &out) {
                Ok(report) => {
                    let s = report.summary();
                    println!(
                        "{} ({}): {} steps, {} tap changes, {:.1} kWh losses, {:.4} of load-serving samples in band -> {}",
                        report.name,
                        report.mode.as_str(),
                        s.steps,
                        s.tap_changes,
                        s.losses_kwh,
                        s.in_band_fraction,
                        out.display()
                    );
                }
                Err(e @ ScenarioError::Step { .. }) => {
                    bail!("{e} (partial report written to {})", out.display())
                }
                Err(e) => return Err(e.into()),
            }
        }
        Command::Compare { a, b, out } => {
            let ra = RunReport::read_dir(existing(&a)?)?;
            let rb = RunReport::read_dir(existing(&b)?)?;
            let cmp = scenario::compare(&ra, &rb)?;
            print!("{}\n{}", cmp.to_table(), cmp.tap_table());
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir).with_context(|| dir.display().to_string())?;
                let path = dir.join("comparison.csv");
                std::fs::write(&path, cmp.to_csv()).with_context(|| path.display().to_string())?;
            }
        }
    }
    Ok(())
}
