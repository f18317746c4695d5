use clap::{Args, ValueEnum};
use hyl_core::condensate::{rho_gc, solve_rho_bar, Branch};
use hyl_core::finite_volume::{
    canonical_hyl_partition, default_q, free_canonical_pmf, log_long_mass_table, FiniteVolumeModel,
    Interaction,
};
use hyl_core::full_hyl::pressure_gap_auto;
use hyl_core::thermo::critical_density;
use serde::Serialize;

use crate::output::{write_table, Table};
use crate::{hyl_params, Ensemble, Failure, Grid, ModelArgs, OutputArgs};

#[derive(Args, Debug, Clone, Serialize)]
pub struct PhaseArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, value_enum, default_value_t = Ensemble::Canonical)]
    pub ensemble: Ensemble,
    /// Mean-field strength; only the grand-canonical diagram depends on it.
    #[arg(long, default_value_t = 2.0)]
    pub a: f64,
    /// Counter-term strength.
    #[arg(long)]
    pub b: f64,
    /// `start:stop:points`; defaults to `(0, 2ρ_c]` or `μ ∈ [-1, 1]`.
    #[arg(long, allow_hyphen_values = true)]
    pub grid: Option<Grid>,
    #[command(flatten)]
    pub output: OutputArgs,
}

fn branch_name(b: Branch) -> &'static str {
    match b {
        Branch::Zero => "zero",
        Branch::Interior => "interior",
        Branch::Coexistence => "coexistence",
    }
}

/// Evaluates `f` over `xs` on all available cores, keeping the input order.
fn par_map<T: Send, F: Fn(f64) -> T + Sync>(xs: &[f64], f: F) -> Vec<T> {
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get()).min(xs.len()).max(1);
    let chunk = xs.len().div_ceil(threads);
    std::thread::scope(|s| {
        let handles: Vec<_> = xs
            .chunks(chunk)
            .map(|c| {
                let f = &f;
                s.spawn(move || c.iter().map(|&x| f(x)).collect::<Vec<T>>())
            })
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("grid worker panicked")).collect()
    })
}

pub fn phase_diagram(args: &PhaseArgs) -> Result<(), Failure> {
    let p = args.model.params()?;
    let h = hyl_params(args.a, args.b)?;
    let mut resolved = args.clone();
    let table = match args.ensemble {
        Ensemble::Canonical => {
            let rc = critical_density(&p);
            let grid = args.grid.unwrap_or(Grid { start: 2.0 * rc / 400.0, stop: 2.0 * rc, points: 400 });
            if grid.start < 0.0 {
                return Err(Failure::Usage(format!("densities must be non-negative, got {}", grid.start)));
            }
            resolved.grid = Some(grid);
            let rows = par_map(&grid.values(), |rho| solve_rho_bar(&p, &h, rho).map(|s| (rho, s)));
            let mut t = Table::new(&["rho", "rho_bar", "rho_free", "branch"]);
            for r in rows {
                let (rho, s) = r?;
                t.push(vec![
                    rho.into(),
                    s.rho_bar.into(),
                    (rho - s.rho_bar).into(),
                    branch_name(s.branch).into(),
                ]);
            }
            t
        }
        Ensemble::Gc => {
            let grid = args.grid.unwrap_or(Grid { start: -1.0, stop: 1.0, points: 201 });
            resolved.grid = Some(grid);
            let rows = par_map(&grid.values(), |mu| {
                let rho = rho_gc(&p, &h, mu)?;
                Ok::<_, hyl_core::Error>((mu, rho, solve_rho_bar(&p, &h, rho)?.rho_bar))
            });
            let mut t = Table::new(&["mu", "rho_gc", "rho_bar"]);
            for r in rows {
                let (mu, rho, bar) = r?;
                t.push(vec![mu.into(), rho.into(), bar.into()]);
            }
            t
        }
    };
    write_table(&table, args.output.output, args.output.out.as_deref(), "phase-diagram", &resolved)
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct GapArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = 2.0)]
    pub a: f64,
    #[arg(long, default_value_t = 1.0)]
    pub b: f64,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub mu: f64,
    /// Agreement required between successive truncation lengths.
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    #[command(flatten)]
    pub output: OutputArgs,
}

pub fn pressure_gap(args: &GapArgs) -> Result<(), Failure> {
    let p = args.model.params()?;
    let h = hyl_params(args.a, args.b)?;
    if args.tol.is_nan() || args.tol <= 0.0 {
        return Err(Failure::Usage(format!("--tol must be positive, got {}", args.tol)));
    }
    let g = pressure_gap_auto(&p, &h, args.mu, args.tol)?;
    let mut t = Table::new(&["mu", "gap", "p_tilde", "x1_star", "lower_bound", "jmax"]);
    t.push(vec![
        args.mu.into(),
        g.gap.into(),
        g.p_tilde.into(),
        g.x1_star.into(),
        g.lower_bound.into(),
        (g.jmax as u64).into(),
    ]);
    write_table(&t, args.output.output, args.output.out.as_deref(), "pressure-gap", args)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PmfKind {
    /// `P(N_Λ = n)` of the free gas, `n = 0..=N`.
    Free,
    /// `P(N^long = x)` of the free gas, `x = 0..=N`.
    Long,
    /// Law of `N^long` in the canonical partial HYL model at `N` particles.
    HylLong,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct PmfArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, value_enum)]
    pub kind: PmfKind,
    #[arg(long = "volume", alias = "V")]
    pub volume: f64,
    /// Long-loop cut-off; defaults to `⌈V^{3/4}⌉`.
    #[arg(long)]
    pub q: Option<u64>,
    /// Chemical potential of the free measure (`≤ 0`).
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub mu: f64,
    #[arg(long, default_value_t = 2.0)]
    pub a: f64,
    #[arg(long, default_value_t = 1.0)]
    pub b: f64,
    /// Largest value tabulated, or the particle number for `hyl-long`.
    #[arg(long = "N")]
    pub n: u64,
    #[command(flatten)]
    pub output: OutputArgs,
}

pub fn pmf(args: &PmfArgs) -> Result<(), Failure> {
    let p = args.model.params()?;
    let q = args.q.unwrap_or_else(|| default_q(args.volume).min(args.volume.max(1.0).floor() as u64));
    let mut resolved = args.clone();
    resolved.q = Some(q);
    let interaction = match args.kind {
        PmfKind::HylLong => Interaction::Hyl(hyl_params(args.a, args.b)?),
        _ => Interaction::Free,
    };
    let model = FiniteVolumeModel::new(p, args.volume, q, interaction, args.mu)?;
    let mut t = Table::new(&["n", "probability"]);
    match args.kind {
        PmfKind::Free => {
            for (n, pr) in free_canonical_pmf(&model, args.n)?.into_iter().enumerate() {
                t.push(vec![(n as u64).into(), pr.into()]);
            }
        }
        PmfKind::Long => {
            for (n, lp) in log_long_mass_table(&model, args.n)?.into_iter().enumerate() {
                t.push(vec![(n as u64).into(), lp.exp().into()]);
            }
        }
        PmfKind::HylLong => {
            for (m, pr) in canonical_hyl_partition(&model, args.n)?.long_spectrum {
                t.push(vec![m.into(), pr.into()]);
            }
        }
    }
    write_table(&t, args.output.output, args.output.out.as_deref(), "pmf", &resolved)
}
