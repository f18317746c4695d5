use std::path::PathBuf;

use clap::Args;
use hyl_core::condensate::rho_gc;
use hyl_core::finite_volume::{
    canonical_hyl_partition, default_q, grand_canonical_exact, FiniteVolumeModel, Interaction,
};
use hyl_core::monte_carlo::{sample_canonical_hyl, sample_grand_canonical, SamplerConfig};
use serde::Serialize;
use serde_json::{json, Map};

use crate::output::{document, sink, write_json};
use crate::{hyl_params, Ensemble, Failure, ModelArgs};

#[derive(Args, Debug, Clone, Serialize)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, value_enum, default_value_t = Ensemble::Canonical)]
    pub ensemble: Ensemble,
    #[arg(long, default_value_t = 2.0)]
    pub a: f64,
    #[arg(long, default_value_t = 1.0)]
    pub b: f64,
    #[arg(long = "volume", alias = "V", default_value_t = 1000.0)]
    pub volume: f64,
    /// Long-loop cut-off; defaults to `⌈V^{3/4}⌉`.
    #[arg(long)]
    pub q: Option<u64>,
    /// Canonical density; the particle number is `round(ρV)`.
    #[arg(long, conflicts_with = "n")]
    pub rho: Option<f64>,
    /// Canonical particle number.
    #[arg(long = "N")]
    pub n: Option<u64>,
    /// Grand-canonical chemical potential.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub mu: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 4)]
    pub chains: usize,
    #[arg(long, default_value_t = 20_000)]
    pub sweeps: u64,
    /// Defaults to a tenth of the sweeps.
    #[arg(long)]
    pub burn_in: Option<u64>,
    /// Canonical only: flatten the largest-loop histogram and reweight.
    #[arg(long)]
    pub flat_histogram: bool,
    /// Per-sweep trace CSV.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Report JSON; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run(args: &SimulateArgs) -> Result<(), Failure> {
    let p = args.model.params()?;
    let h = hyl_params(args.a, args.b)?;
    if !(args.volume >= 1.0 && args.volume.is_finite()) {
        return Err(Failure::Usage(format!("volume must be at least 1, got {}", args.volume)));
    }
    let q = args.q.unwrap_or_else(|| default_q(args.volume).min(args.volume.floor() as u64));
    let burn_in = args.burn_in.unwrap_or(args.sweeps / 10);
    let mut cfg = SamplerConfig::new(args.seed, args.chains, args.sweeps, burn_in)?;
    cfg.flat_histogram = args.flat_histogram;
    let mu = if args.ensemble == Ensemble::Gc { args.mu } else { 0.0 };
    let model = FiniteVolumeModel::new(p, args.volume, q, Interaction::Hyl(h), mu)?;
    if let Some(w) = model.window_warning() {
        eprintln!("warning: {w}");
    }

    let mut resolved = args.clone();
    resolved.q = Some(q);
    resolved.burn_in = Some(burn_in);
    let mut body = Map::new();
    let run = match args.ensemble {
        Ensemble::Canonical => {
            let n = match (args.n, args.rho) {
                (Some(n), _) => n,
                (None, Some(rho)) if rho > 0.0 && rho.is_finite() => (rho * args.volume).round() as u64,
                (None, Some(rho)) => {
                    return Err(Failure::Usage(format!("--rho must be positive, got {rho}")))
                }
                (None, None) => return Err(Failure::Usage("canonical runs need --rho or --N".into())),
            };
            if n == 0 {
                return Err(Failure::Usage("the particle number must be positive".into()));
            }
            resolved.n = Some(n);
            let run = sample_canonical_hyl(&model, n, &cfg)?;
            let exact = canonical_hyl_partition(&model, n)?;
            body.insert("exact_long_density".into(), json!(exact.mean_long() / args.volume));
            run
        }
        Ensemble::Gc => {
            if args.n.is_some() || args.rho.is_some() {
                return Err(Failure::Usage("grand-canonical runs take --mu, not --rho or --N".into()));
            }
            let run = sample_grand_canonical(&model, &cfg)?;
            body.insert("rho_gc".into(), json!(rho_gc(&p, &h, mu)?));
            body.insert("exact_density".into(), json!(grand_canonical_exact(&model)?.mean_density));
            run
        }
    };
    body.insert("long_density".into(), serde_json::to_value(run.long_density()).unwrap());
    body.insert("density".into(), serde_json::to_value(run.density()).unwrap());
    body.insert("sampler".into(), serde_json::to_value(cfg).unwrap());
    if let Some(path) = &args.trace {
        run.write_trace_csv(sink(Some(path))?)?;
    }
    write_json(&document("simulate", &resolved, body), args.out.as_deref())
}
