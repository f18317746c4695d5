//! `hyl`: tables and plot-ready data for the partial HYL loop soup.

mod commands;
mod output;
mod simulate;
mod validate;

use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use hyl_core::condensate::HYLParams;
use hyl_core::thermo::ModelParams;
use serde::Serialize;

use output::Format;

#[derive(Parser)]
#[command(
    name = "hyl",
    version,
    about = "Phase diagrams, validations and simulations of the partial HYL Bose gas"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Condensate density over a density (or chemical potential) grid.
    PhaseDiagram(commands::PhaseArgs),
    /// Run a named validation suite; exit code 1 if any check fails.
    Validate(validate::ValidateArgs),
    /// Monte Carlo run writing a trace CSV and a JSON estimate report.
    Simulate(simulate::SimulateArgs),
    /// Upper-bound witness for the full-vs-partial pressure gap.
    PressureGap(commands::GapArgs),
    /// Exact finite-volume probability mass functions.
    Pmf(commands::PmfArgs),
}

/// Why a command did not succeed.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Compute(String),
    Io(String),
    /// A validation suite ran and at least one check failed.
    Checks,
}

impl From<hyl_core::Error> for Failure {
    fn from(e: hyl_core::Error) -> Self {
        match e {
            hyl_core::Error::Config(m) => Failure::Usage(m),
            other => Failure::Compute(other.to_string()),
        }
    }
}

#[derive(Args, Debug, Clone, Copy, Serialize)]
pub struct ModelArgs {
    /// Spatial dimension (at least 3).
    #[arg(long, default_value_t = 3)]
    pub d: u32,
    /// Inverse temperature.
    #[arg(long, default_value_t = 1.0)]
    pub beta: f64,
}

impl ModelArgs {
    pub fn params(&self) -> Result<ModelParams, Failure> {
        ModelParams::new(self.d, self.beta).map_err(Failure::from)
    }
}

pub fn hyl_params(a: f64, b: f64) -> Result<HYLParams, Failure> {
    HYLParams::new(a, b).map_err(|e| Failure::Usage(e.to_string()))
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct OutputArgs {
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub output: Format,
    /// Output file; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Ensemble {
    Canonical,
    Gc,
}

/// `start:stop:points` with `points ≥ 2` and `start < stop`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Grid {
    pub start: f64,
    pub stop: f64,
    pub points: usize,
}

impl Grid {
    pub fn values(&self) -> Vec<f64> {
        let n = self.points - 1;
        let step = (self.stop - self.start) / n as f64;
        (0..self.points).map(|i| if i == n { self.stop } else { self.start + step * i as f64 }).collect()
    }
}

impl FromStr for Grid {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 3 {
            return Err(format!("expected start:stop:points, got '{s}'"));
        }
        let num = |t: &str| t.trim().parse::<f64>().map_err(|e| format!("'{t}': {e}"));
        let start = num(parts[0])?;
        let stop = num(parts[1])?;
        let points: usize = parts[2].trim().parse().map_err(|e| format!("'{}': {e}", parts[2]))?;
        if points < 2 {
            return Err(format!("a grid needs at least 2 points, got {points}"));
        }
        if !(start.is_finite() && stop.is_finite()) || start >= stop {
            return Err(format!("grid start must be below stop, got {start}:{stop}"));
        }
        Ok(Grid { start, stop, points })
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::PhaseDiagram(a) => commands::phase_diagram(&a),
        Command::Validate(a) => validate::run(&a),
        Command::Simulate(a) => simulate::run(&a),
        Command::PressureGap(a) => commands::pressure_gap(&a),
        Command::Pmf(a) => commands::pmf(&a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Checks) => ExitCode::from(1),
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            eprintln!("\nFor more information, try '--help'.");
            ExitCode::from(2)
        }
        Err(Failure::Compute(m)) | Err(Failure::Io(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}
