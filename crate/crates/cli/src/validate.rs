use clap::{Args, ValueEnum};
use hyl_core::condensate::HYLParams;
use hyl_core::finite_volume::{
    default_q, log_long_mass_table, long_loop_density_exact, partition_asymptotics, short_sector_check,
    FiniteVolumeModel, Interaction,
};
use hyl_core::full_hyl::pressure_gap;
use hyl_core::monte_carlo::{sample_canonical_hyl, SamplerConfig};
use hyl_core::thermo::{asymptotics_validator, critical_density, AsymptoticKind, ModelParams};
use serde::Serialize;

use crate::output::{write_table, Cell, Table};
use crate::{hyl_params, Failure, ModelArgs, OutputArgs};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    Asymptotics,
    FiniteVolume,
    McVsExact,
    PressureGap,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct ValidateArgs {
    #[arg(value_enum)]
    pub suite: Suite,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = 2.0)]
    pub a: f64,
    #[arg(long, default_value_t = 1.0)]
    pub b: f64,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub mu: f64,
    /// Volume of the finite-volume and Monte Carlo suites.
    #[arg(long = "volume", alias = "V")]
    pub volume: Option<f64>,
    #[arg(long)]
    pub q: Option<u64>,
    /// Supercritical density; defaults to `1.5ρ_c`.
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 4)]
    pub chains: usize,
    #[arg(long, default_value_t = 100_000)]
    pub sweeps: u64,
    #[arg(long)]
    pub burn_in: Option<u64>,
    /// Overrides the suite's main tolerance.
    #[arg(long)]
    pub tol: Option<f64>,
    #[command(flatten)]
    pub output: OutputArgs,
}

struct Checks {
    table: Table,
    all_pass: bool,
}

impl Checks {
    fn new() -> Self {
        Self {
            table: Table::new(&["check", "value", "reference", "tolerance", "pass", "detail"]),
            all_pass: true,
        }
    }

    fn add(
        &mut self,
        check: impl Into<String>,
        value: f64,
        reference: f64,
        tol: f64,
        pass: bool,
        detail: String,
    ) {
        self.all_pass &= pass;
        self.table.push(vec![
            Cell::Text(check.into()),
            value.into(),
            reference.into(),
            tol.into(),
            pass.into(),
            detail.into(),
        ]);
    }
}

fn kind_name(k: AsymptoticKind) -> &'static str {
    match k {
        AsymptoticKind::DensityNear0 => "density_near_0",
        AsymptoticKind::MuNearRc => "mu_near_rho_c",
        AsymptoticKind::RateNearRc => "rate_near_rho_c",
    }
}

fn join(xs: &[f64]) -> String {
    xs.iter().map(|x| format!("{x:.6}")).collect::<Vec<_>>().join(" ")
}

/// The ratio must end within `tol` of 1 and approach 1 monotonically.
fn trend_ok(ratios: &[f64], tol: f64) -> bool {
    let dev: Vec<f64> = ratios.iter().map(|r| (r - 1.0).abs()).collect();
    dev.windows(2).all(|w| w[1] < w[0]) && dev.last().is_some_and(|&d| d <= tol)
}

fn asymptotics(p: &ModelParams, tol: f64, out: &mut Checks) {
    let hs = [1e-2, 1e-3, 1e-4];
    for kind in [AsymptoticKind::DensityNear0, AsymptoticKind::MuNearRc, AsymptoticKind::RateNearRc] {
        let runs: Vec<_> = hs.iter().map(|&h| asymptotics_validator(p, kind, h)).collect();
        if let Some(Err(e)) = runs.iter().find(|r| r.is_err()) {
            out.add(kind_name(kind), f64::NAN, 1.0, tol, false, format!("undefined: {e}"));
            continue;
        }
        let runs: Vec<_> = runs.into_iter().map(|r| r.unwrap()).collect();
        let stated: Vec<f64> = runs.iter().map(|c| c.ratio).collect();
        let rederived: Vec<f64> = runs.iter().map(|c| c.rederived_ratio).collect();
        let h_list = "h = 1e-2 1e-3 1e-4";
        out.add(
            kind_name(kind),
            stated[2],
            1.0,
            tol,
            trend_ok(&stated, tol),
            format!("{h_list}: ratio {}", join(&stated)),
        );
        out.add(
            format!("{} (rederived)", kind_name(kind)),
            rederived[2],
            1.0,
            tol,
            trend_ok(&rederived, tol),
            format!("{h_list}: ratio {}", join(&rederived)),
        );
    }
}

fn finite_volume(
    p: &ModelParams,
    hyl: &HYLParams,
    args: &ValidateArgs,
    out: &mut Checks,
) -> Result<(), Failure> {
    let v = args.volume.unwrap_or(2000.0);
    let q = args.q.unwrap_or_else(|| default_q(v));
    let tol = args.tol.unwrap_or(0.1);
    let free = FiniteVolumeModel::new(*p, v, q, Interaction::Free, 0.0)?;
    let x_max = (2.0 * v) as u64;
    let table = log_long_mass_table(&free, x_max)?;
    let scale = p.beta * v * p.c_d();
    let power = 0.5 * f64::from(p.d) + 1.0;
    let scaled: Vec<f64> = (x_max / 4..=x_max)
        .map(|x| table[x as usize].exp() * (p.beta * x as f64).powf(power) / scale)
        .collect();
    let lo = scaled.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let worst = if (lo - 1.0).abs() > (hi - 1.0).abs() { lo } else { hi };
    out.add(
        "long_mass_law",
        worst,
        1.0,
        tol,
        (worst - 1.0).abs() <= tol,
        format!("P(N_long = x) (bx)^(d/2+1)/(bVc_d) over x in [V/2, 2V] lies in [{lo:.6}, {hi:.6}]"),
    );

    let rc = critical_density(p);
    let short = |vol: f64| -> Result<f64, Failure> {
        let m = FiniteVolumeModel::new(*p, vol, default_q(vol), Interaction::Free, 0.0)?;
        Ok(short_sector_check(&m, (0.5 * rc * vol).floor() as u64, 0.1 * rc)?.ratio)
    };
    let (r1, r2) = (short(0.5 * v)?, short(v)?);
    out.add(
        "short_sector_ratio",
        r2,
        1.0,
        (r1 - 1.0).abs(),
        r2 >= 1.0 && (r2 - 1.0).abs() < (r1 - 1.0).abs(),
        format!("y = floor(rho_c V / 2): ratio {r1:.6} at V/2, {r2:.6} at V; must approach 1"),
    );

    let rho = args.rho.unwrap_or(1.5 * rc);
    let at = |vol: f64| -> Result<_, Failure> {
        let m = FiniteVolumeModel::new(*p, vol, default_q(vol), Interaction::Hyl(*hyl), 0.0)?;
        Ok(partition_asymptotics(&m, (rho * vol).round() as u64)?)
    };
    let (a1, a2) = (at(v)?, at(2.0 * v)?);
    out.add(
        "partition_ratio",
        a1.ratio_stated,
        1.0,
        0.15,
        (a1.ratio_stated - 1.0).abs() <= 0.15
            && (a2.ratio_stated - 1.0).abs() < (a1.ratio_stated - 1.0).abs(),
        format!(
            "ratio {:.6} at V, {:.6} at 2V; with prefactor 1/sqrt(1 - b/mu') {:.6}, {:.6}",
            a1.ratio_stated, a2.ratio_stated, a1.ratio_laplace, a2.ratio_laplace
        ),
    );
    out.add(
        "free_energy",
        a2.free_energy_exact,
        a2.free_energy_limit,
        1e-3,
        (a2.free_energy_exact - a2.free_energy_limit).abs() <= 1e-3,
        format!("-(1/bV) ln Z at 2V = {}", 2.0 * v),
    );
    Ok(())
}

fn mc_vs_exact(
    p: &ModelParams,
    hyl: &HYLParams,
    args: &ValidateArgs,
    out: &mut Checks,
) -> Result<(), Failure> {
    let v = args.volume.unwrap_or(1000.0);
    let q = args.q.unwrap_or_else(|| default_q(v));
    let rho = args.rho.unwrap_or(1.5 * critical_density(p));
    let n = (rho * v).round() as u64;
    let model = FiniteVolumeModel::new(*p, v, q, Interaction::Hyl(*hyl), 0.0)?;
    let mut cfg =
        SamplerConfig::new(args.seed, args.chains, args.sweeps, args.burn_in.unwrap_or(args.sweeps / 4))?;
    cfg.flat_histogram = true;
    let est = sample_canonical_hyl(&model, n, &cfg)?.long_density();
    let exact = long_loop_density_exact(&model, n)?;
    let z_max = args.tol.unwrap_or(3.0);
    let z = (est.mean - exact) / est.std_error;
    out.add(
        "long_density",
        est.mean,
        exact,
        z_max * est.std_error,
        z.abs() <= z_max,
        format!(
            "V = {v}, q = {q}, N = {n}: standard error {:.3e}, z = {z:.3}, ESS {:.0}",
            est.std_error, est.ess
        ),
    );
    Ok(())
}

fn gap(p: &ModelParams, hyl: &HYLParams, args: &ValidateArgs, out: &mut Checks) -> Result<(), Failure> {
    let g1 = pressure_gap(p, hyl, args.mu, 1000)?;
    let g2 = pressure_gap(p, hyl, args.mu, 2000)?;
    out.add(
        "gap_witness",
        g2.gap,
        0.0,
        1e-8,
        g2.gap < -1e-8,
        format!("must be below -1e-8; lower bound {:.6e}", g2.lower_bound),
    );
    let tol = args.tol.unwrap_or(1e-6);
    let diff = (g2.gap - g1.gap).abs();
    out.add(
        "gap_stability",
        g2.gap,
        g1.gap,
        tol,
        diff <= tol,
        format!("jmax 1000 -> 2000 changes the witness by {diff:.3e}"),
    );
    Ok(())
}

pub fn run(args: &ValidateArgs) -> Result<(), Failure> {
    let p = args.model.params()?;
    let hyl = hyl_params(args.a, args.b)?;
    if let Some(t) = args.tol {
        if t.is_nan() || t <= 0.0 {
            return Err(Failure::Usage(format!("--tol must be positive, got {t}")));
        }
    }
    let mut checks = Checks::new();
    match args.suite {
        Suite::Asymptotics => asymptotics(&p, args.tol.unwrap_or(0.02), &mut checks),
        Suite::FiniteVolume => finite_volume(&p, &hyl, args, &mut checks)?,
        Suite::McVsExact => mc_vs_exact(&p, &hyl, args, &mut checks)?,
        Suite::PressureGap => gap(&p, &hyl, args, &mut checks)?,
    }
    write_table(&checks.table, args.output.output, args.output.out.as_deref(), "validate", args)?;
    if checks.all_pass {
        Ok(())
    } else {
        Err(Failure::Checks)
    }
}
