//! Metropolis–Hastings sampling of loop-length configurations.
//!
//! The target weight of a configuration `(n_j)` is
//!
//! ```text
//! Π_j λ_j^{n_j}/n_j! · exp((bβ/2V)Σ_{k≥q} k²n_k²)                  canonical
//! Π_j λ_j^{n_j}/n_j! · exp(βμN − βaN²/2V + (bβ/2V)Σ_{k≥q} k²n_k²)    grand canonical
//! ```
//!
//! with `λ_j` taken at `μ = 0`. Canonical moves keep `N = Σ j n_j` fixed:
//!
//! * split: pick a loop uniformly, cut it at a uniform point `1..j−1`;
//! * merge: pick an unordered pair of loops uniformly and join them;
//! * reslice: pick an ordered pair of loops and move `s` particles from the
//!   first to the second, where `s` is 1 with probability 1/2 and otherwise
//!   geometric with mean `√V`.
//!
//! Grand-canonical runs add insertion of a loop with length drawn from
//! `λ_j` restricted to `j ≤ J`, and deletion of a uniformly chosen loop.
//! Acceptance uses the total proposal probability of the resulting
//! configuration, summed over every route that produces it.
//!
//! Canonical runs can instead sample the target times `e^{B(ℓ)}`, where `ℓ`
//! is the largest loop length and `B` is learned by Wang–Landau during
//! burn-in. This lets the chain cross between states with and without long
//! loops. Records then carry `−B(ℓ)` and estimates are reweighted.

use std::collections::BTreeMap;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::finite_volume::{CycleCounts, FiniteVolumeModel, Interaction};

/// Relative frequencies of the particle-conserving moves.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MoveWeights {
    pub split: f64,
    pub merge: f64,
    pub reslice: f64,
}

impl Default for MoveWeights {
    fn default() -> Self {
        Self { split: 0.3, merge: 0.3, reslice: 0.4 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub seed: u64,
    pub n_chains: usize,
    pub sweeps: u64,
    pub burn_in: u64,
    pub move_weights: MoveWeights,
    /// Grand canonical only: probability that a move is an insertion or a
    /// deletion (half each).
    pub exchange_probability: f64,
    /// Longest loop an insertion may create; `None` means `⌈V⌉`.
    pub insert_cap: Option<u64>,
    /// Canonical only: learn a bias on the largest loop length during
    /// burn-in (Wang–Landau), then sample the biased law and reweight.
    #[serde(default)]
    pub flat_histogram: bool,
}

impl SamplerConfig {
    pub fn new(seed: u64, n_chains: usize, sweeps: u64, burn_in: u64) -> Result<Self> {
        let cfg = Self {
            seed,
            n_chains,
            sweeps,
            burn_in,
            move_weights: MoveWeights::default(),
            exchange_probability: 0.2,
            insert_cap: None,
            flat_histogram: false,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let w = self.move_weights;
        if [w.split, w.merge, w.reslice].iter().any(|&x| !(x >= 0.0 && x.is_finite())) {
            return Err(Error::Config(format!("move weights must be non-negative, got {w:?}")));
        }
        if ((w.split + w.merge + w.reslice) - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!("move weights must sum to 1, got {w:?}")));
        }
        if w.split == 0.0 || w.merge == 0.0 {
            return Err(Error::Config("split and merge weights must be positive".into()));
        }
        if self.n_chains == 0 {
            return Err(Error::Config("at least one chain is required".into()));
        }
        if self.burn_in >= self.sweeps {
            return Err(Error::Config(format!(
                "burn-in {} must be smaller than the number of sweeps {}",
                self.burn_in, self.sweeps
            )));
        }
        if !(self.exchange_probability > 0.0 && self.exchange_probability < 1.0) {
            return Err(Error::Config(format!(
                "exchange probability must lie in (0, 1), got {}",
                self.exchange_probability
            )));
        }
        if self.insert_cap == Some(0) {
            return Err(Error::Config("insert cap must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MoveKind {
    Split,
    Merge,
    Reslice,
    Insert,
    Delete,
}

impl MoveKind {
    pub const ALL: [MoveKind; 5] =
        [MoveKind::Split, MoveKind::Merge, MoveKind::Reslice, MoveKind::Insert, MoveKind::Delete];

    pub fn name(self) -> &'static str {
        match self {
            MoveKind::Split => "split",
            MoveKind::Merge => "merge",
            MoveKind::Reslice => "reslice",
            MoveKind::Insert => "insert",
            MoveKind::Delete => "delete",
        }
    }

    fn index(self) -> usize {
        self as usize
    }

    fn reverse(self) -> MoveKind {
        match self {
            MoveKind::Split => MoveKind::Merge,
            MoveKind::Merge => MoveKind::Split,
            MoveKind::Reslice => MoveKind::Reslice,
            MoveKind::Insert => MoveKind::Delete,
            MoveKind::Delete => MoveKind::Insert,
        }
    }
}

/// A proposed change: loops removed (by position) and lengths added.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Change {
    kind: MoveKind,
    remove: [usize; 2],
    n_remove: usize,
    add: [u64; 2],
    n_add: usize,
}

impl Change {
    fn new(kind: MoveKind, remove: &[usize], add: &[u64]) -> Self {
        let mut c = Self { kind, remove: [0; 2], n_remove: remove.len(), add: [0; 2], n_add: add.len() };
        c.remove[..remove.len()].copy_from_slice(remove);
        c.add[..add.len()].copy_from_slice(add);
        c
    }

    fn added(&self) -> &[u64] {
        &self.add[..self.n_add]
    }
}

/// Fixed parameters of the target law.
#[derive(Debug, Clone)]
struct Target {
    model: FiniteVolumeModel,
    grand_canonical: bool,
    /// `bβ/2V`.
    counter: f64,
    log_lambda: Vec<f64>,
}

impl Target {
    fn new(model: &FiniteVolumeModel, grand_canonical: bool, cache: usize) -> Self {
        let counter = 0.5 * model.counter_strength() * model.params.beta / model.volume;
        let log_lambda = (0..=cache as u64)
            .map(|j| if j == 0 { f64::NEG_INFINITY } else { model.log_intensity_at(j, 0.0) })
            .collect();
        Self { model: *model, grand_canonical, counter, log_lambda }
    }

    fn log_lambda(&self, j: u64) -> f64 {
        match self.log_lambda.get(j as usize) {
            Some(&v) => v,
            None => self.model.log_intensity_at(j, 0.0),
        }
    }

    fn particle_term(&self, n: u64) -> f64 {
        if !self.grand_canonical {
            return 0.0;
        }
        let beta = self.model.params.beta;
        let nf = n as f64;
        beta * self.model.mu * nf
            - 0.5 * beta * self.model.mean_field_strength() * nf * nf / self.model.volume
    }

    /// `ln` of the unnormalised target weight.
    fn log_weight(&self, counts: &CycleCounts) -> f64 {
        let q = self.model.q;
        let mut s = self.particle_term(counts.n_total());
        for (j, n) in counts.iter() {
            s += n as f64 * self.log_lambda(j) - libm::lgamma(n as f64 + 1.0);
            if j >= q {
                let kn = (j * n) as f64;
                s += self.counter * kn * kn;
            }
        }
        s
    }
}

/// One Markov chain over loop configurations.
#[derive(Debug, Clone)]
pub struct Chain {
    target: Target,
    /// Probability of each move kind, indexed by [`MoveKind`].
    move_prob: [f64; 5],
    loops: Vec<u64>,
    counts: Vec<u64>,
    n_total: u64,
    /// `Σ_{k≥q} (k n_k)²`.
    counter_sq: f64,
    reslice_p: f64,
    insert_log_prob: Vec<f64>,
    insert_cdf: Vec<f64>,
    rng: ChaCha8Rng,
    proposed: [u64; 5],
    accepted: [u64; 5],
    max_loop: u64,
    bias: Option<Bias>,
}

/// Additive log-weight on the largest loop length, learned by Wang–Landau
/// towards a histogram proportional to `share`.
#[derive(Debug, Clone)]
struct Bias {
    /// Lengths below `floor` share the bin at `floor`; lengths past the
    /// last bin share that bin.
    floor: u64,
    value: Vec<f64>,
    share: Vec<f64>,
    /// Visits divided by `share` since the last flat histogram.
    hist: Vec<f64>,
    /// Zero once frozen.
    increment: f64,
    visits: u64,
    /// Past the flat-histogram stage the increment follows `bins/t`.
    one_over_t: bool,
}

impl Bias {
    /// Bins `floor..=top`; the first and last lump every shorter and
    /// longer length and each aim at as many visits as all bins between.
    fn new(floor: u64, top: u64) -> Self {
        let n = (top.max(floor) - floor + 1) as usize;
        let mut share = vec![1.0; n];
        if n > 2 {
            share[0] = (n - 2) as f64;
            share[n - 1] = (n - 2) as f64;
        }
        Self::with_values(floor, vec![0.0; n], share, 1.0)
    }

    fn with_values(floor: u64, value: Vec<f64>, share: Vec<f64>, increment: f64) -> Self {
        let hist = vec![0.0; value.len()];
        Self { floor, value, share, hist, increment, visits: 0, one_over_t: false }
    }

    fn bin(&self, l: u64) -> usize {
        ((l.max(self.floor) - self.floor) as usize).min(self.value.len() - 1)
    }

    fn at(&self, l: u64) -> f64 {
        self.value[self.bin(l)]
    }

    fn visit(&mut self, l: u64) {
        if self.increment > 0.0 {
            let b = self.bin(l);
            self.value[b] -= self.increment / self.share[b];
            self.hist[b] += 1.0 / self.share[b];
            self.visits += 1;
        }
    }

    /// Halves the increment once every bin holds at least 80% of the mean
    /// count, switching to `bins/t` when that becomes the larger one.
    fn update_increment(&mut self) {
        let n = self.hist.len() as f64;
        let floor = n / self.visits.max(1) as f64;
        if self.one_over_t {
            self.increment = floor;
            return;
        }
        let mean = self.hist.iter().sum::<f64>() / n;
        let min = self.hist.iter().copied().fold(f64::INFINITY, f64::min);
        if mean > 0.0 && min >= 0.8 * mean {
            self.increment *= 0.5;
            self.hist.iter_mut().for_each(|h| *h = 0.0);
            if self.increment <= floor {
                self.one_over_t = true;
                self.increment = floor;
            }
        }
    }
}

impl Chain {
    /// Canonical chain at particle number `n`, started from one loop of length `n`.
    pub fn canonical(model: &FiniteVolumeModel, n: u64, cfg: &SamplerConfig, chain: u64) -> Result<Self> {
        cfg.validate()?;
        if n < 1 {
            return Err(Error::Config("the canonical sampler needs N >= 1".into()));
        }
        let w = cfg.move_weights;
        let probs = [w.split, w.merge, w.reslice, 0.0, 0.0];
        let target = Target::new(model, false, n as usize);
        let mut c = Self::empty(target, probs, model, cfg, chain, &[]);
        c.push(n);
        if cfg.flat_histogram {
            c.bias = Some(Bias::new((model.q / 2).max(1), model.q.min(n)));
        }
        Ok(c)
    }

    /// Grand-canonical chain at the model's `μ`, started from the empty configuration.
    pub fn grand_canonical(model: &FiniteVolumeModel, cfg: &SamplerConfig, chain: u64) -> Result<Self> {
        cfg.validate()?;
        if cfg.flat_histogram {
            return Err(Error::Config("flat-histogram sampling is canonical only".into()));
        }
        match model.interaction {
            Interaction::Free if model.mu > 0.0 => {
                return Err(Error::Config(format!(
                    "the free grand-canonical measure is undefined at mu = {} > 0",
                    model.mu
                )));
            }
            Interaction::MeanField { a } if a <= 0.0 => {
                return Err(Error::Config("the mean-field sampler needs a > 0".into()));
            }
            Interaction::Hyl(h) if h.a <= h.b => {
                return Err(Error::Config(format!(
                    "the grand-canonical HYL sampler needs a > b, got a = {}, b = {}",
                    h.a, h.b
                )));
            }
            _ => {}
        }
        let cap = cfg.insert_cap.unwrap_or(model.volume.ceil() as u64).max(1);
        let w = cfg.move_weights;
        let e = cfg.exchange_probability;
        let probs = [(1.0 - e) * w.split, (1.0 - e) * w.merge, (1.0 - e) * w.reslice, 0.5 * e, 0.5 * e];
        let target = Target::new(model, true, 4 * cap as usize);
        let log_l: Vec<f64> = (1..=cap).map(|j| target.log_lambda(j)).collect();
        let top = log_l.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut cdf = Vec::with_capacity(log_l.len());
        let mut acc = 0.0;
        for &l in &log_l {
            acc += (l - top).exp();
            cdf.push(acc);
        }
        let log_total = top + acc.ln();
        let insert_log_prob: Vec<f64> = log_l.iter().map(|l| l - log_total).collect();
        Ok(Self::empty(target, probs, model, cfg, chain, &[(insert_log_prob, cdf)]))
    }

    fn empty(
        target: Target,
        move_prob: [f64; 5],
        model: &FiniteVolumeModel,
        cfg: &SamplerConfig,
        chain: u64,
        insert: &[(Vec<f64>, Vec<f64>)],
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(chain);
        let (insert_log_prob, insert_cdf) = insert.first().cloned().unwrap_or_default();
        Self {
            target,
            move_prob,
            loops: Vec::new(),
            counts: Vec::new(),
            n_total: 0,
            counter_sq: 0.0,
            reslice_p: 1.0 / model.volume.sqrt().max(1.0),
            insert_log_prob,
            insert_cdf,
            rng,
            proposed: [0; 5],
            accepted: [0; 5],
            max_loop: 0,
            bias: None,
        }
    }

    /// Replaces the configuration; the particle number must match for canonical chains.
    pub fn set_state(&mut self, counts: &CycleCounts) -> Result<()> {
        if !self.target.grand_canonical && counts.n_total() != self.n_total {
            return Err(Error::Config(format!(
                "canonical state must carry {} particles, got {}",
                self.n_total,
                counts.n_total()
            )));
        }
        self.loops.clear();
        self.counts.clear();
        self.n_total = 0;
        self.counter_sq = 0.0;
        self.max_loop = 0;
        for (j, n) in counts.iter() {
            for _ in 0..n {
                self.push(j);
            }
        }
        Ok(())
    }

    pub fn counts(&self) -> CycleCounts {
        let mut c = CycleCounts::new();
        for (j, &n) in self.counts.iter().enumerate() {
            c.add(j as u64, n);
        }
        c
    }

    pub fn n_total(&self) -> u64 {
        self.n_total
    }

    pub fn n_long(&self) -> u64 {
        let q = self.target.model.q as usize;
        self.counts.iter().enumerate().skip(q).map(|(j, &n)| j as u64 * n).sum()
    }

    pub fn largest_loop(&self) -> u64 {
        self.max_loop
    }

    /// `−bias` at the current largest loop: the log-weight that turns the
    /// biased law back into the target. Zero without a bias.
    pub fn log_reweight(&self) -> f64 {
        self.bias.as_ref().map_or(0.0, |b| -b.at(self.max_loop))
    }

    /// Installs a fixed bias `value[l − floor]` on the largest loop length `l`;
    /// lengths below `floor` use the first entry and lengths past the end the last.
    pub fn set_bias(&mut self, floor: u64, value: Vec<f64>) -> Result<()> {
        if floor == 0 || value.is_empty() || value.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("bias needs floor >= 1 and finite values".into()));
        }
        let share = vec![1.0; value.len()];
        self.bias = Some(Bias::with_values(floor, value, share, 0.0));
        Ok(())
    }

    /// Stops adapting the bias.
    pub fn freeze_bias(&mut self) {
        if let Some(b) = self.bias.as_mut() {
            b.increment = 0.0;
        }
    }

    /// Current bias values and the increment still in use, if any bias is set.
    pub fn bias(&self) -> Option<(u64, &[f64], f64)> {
        self.bias.as_ref().map(|b| (b.floor, b.value.as_slice(), b.increment))
    }

    /// `Σ_{k≥q} (k n_k)²`.
    pub fn counter_sum(&self) -> f64 {
        self.counter_sq
    }

    /// `H = (a/2V)N² − (b/2V)Σ_{k≥q}k²n_k²`.
    pub fn energy(&self) -> f64 {
        let m = &self.target.model;
        let nf = self.n_total as f64;
        0.5 * (m.mean_field_strength() * nf * nf - m.counter_strength() * self.counter_sq) / m.volume
    }

    pub fn log_weight(&self) -> f64 {
        self.target.log_weight(&self.counts())
    }

    /// Fraction of accepted proposals per move kind that was attempted.
    pub fn acceptance_rates(&self) -> BTreeMap<String, f64> {
        MoveKind::ALL
            .iter()
            .filter(|k| self.proposed[k.index()] > 0)
            .map(|k| {
                let i = k.index();
                (k.name().to_string(), self.accepted[i] as f64 / self.proposed[i] as f64)
            })
            .collect()
    }

    fn count(&self, j: u64) -> u64 {
        self.counts.get(j as usize).copied().unwrap_or(0)
    }

    fn push(&mut self, j: u64) {
        if self.counts.len() <= j as usize {
            self.counts.resize(j as usize + 1, 0);
        }
        self.adjust_counter(j, 1);
        self.counts[j as usize] += 1;
        self.loops.push(j);
        self.n_total += j;
        self.max_loop = self.max_loop.max(j);
    }

    fn remove_at(&mut self, i: usize) -> u64 {
        let j = self.loops.swap_remove(i);
        self.adjust_counter(j, -1);
        self.counts[j as usize] -= 1;
        self.n_total -= j;
        if j == self.max_loop && self.counts[j as usize] == 0 {
            self.max_loop = (1..j).rev().find(|&l| self.counts[l as usize] > 0).unwrap_or(0);
        }
        j
    }

    fn adjust_counter(&mut self, j: u64, step: i64) {
        if j >= self.target.model.q {
            let n = self.count(j) as f64;
            let m = n + step as f64;
            let jf = j as f64;
            self.counter_sq += jf * jf * (m * m - n * n);
        }
    }

    fn removed_lengths(&self, c: &Change) -> ([u64; 2], usize) {
        let mut r = [0; 2];
        for (k, &i) in c.remove[..c.n_remove].iter().enumerate() {
            r[k] = self.loops[i];
        }
        (r, c.n_remove)
    }

    /// Occupation of `j` after removing `removed` and adding `added`.
    fn count_after(&self, j: u64, removed: &[u64], added: &[u64]) -> u64 {
        let minus = removed.iter().filter(|&&x| x == j).count() as u64;
        let plus = added.iter().filter(|&&x| x == j).count() as u64;
        self.count(j) + plus - minus
    }

    /// `ln π(y) − ln π(x)` for the change, touching only the affected lengths.
    fn delta_log_weight(&self, removed: &[u64], added: &[u64]) -> f64 {
        let q = self.target.model.q;
        let mut touched: [(u64, u64); 4] = [(0, 0); 4];
        let mut n_touched = 0;
        let current = |j: u64, touched: &mut [(u64, u64); 4], n_touched: &mut usize| -> usize {
            if let Some(k) = touched[..*n_touched].iter().position(|&(x, _)| x == j) {
                return k;
            }
            touched[*n_touched] = (j, self.count(j));
            *n_touched += 1;
            *n_touched - 1
        };
        let mut delta = 0.0;
        for &j in removed {
            let k = current(j, &mut touched, &mut n_touched);
            let n = touched[k].1;
            delta += (n as f64).ln() - self.target.log_lambda(j);
            if j >= q {
                let jf = j as f64;
                let nf = n as f64;
                delta += self.target.counter * jf * jf * ((nf - 1.0) * (nf - 1.0) - nf * nf);
            }
            touched[k].1 = n - 1;
        }
        for &j in added {
            let k = current(j, &mut touched, &mut n_touched);
            let n = touched[k].1;
            delta += self.target.log_lambda(j) - ((n + 1) as f64).ln();
            if j >= q {
                let jf = j as f64;
                let nf = n as f64;
                delta += self.target.counter * jf * jf * ((nf + 1.0) * (nf + 1.0) - nf * nf);
            }
            touched[k].1 = n + 1;
        }
        if self.target.grand_canonical {
            let n_new = self.n_total + added.iter().sum::<u64>() - removed.iter().sum::<u64>();
            delta += self.target.particle_term(n_new) - self.target.particle_term(self.n_total);
        }
        delta
    }

    fn reslice_log_step(&self, s: u64) -> f64 {
        let p = self.reslice_p;
        let geom = p * (1.0 - p).powi((s - 1) as i32);
        (0.5 * geom + if s == 1 { 0.5 } else { 0.0 }).ln()
    }

    /// `ln q(x → y)` for a transition of the given kind out of the
    /// configuration described by `count`, `n_loops`, summed over routes.
    fn log_proposal(
        &self,
        kind: MoveKind,
        removed: &[u64],
        added: &[u64],
        count: &dyn Fn(u64) -> u64,
        n_loops: u64,
    ) -> f64 {
        let k = n_loops as f64;
        let lp = self.move_prob[kind.index()].ln();
        match kind {
            MoveKind::Split => {
                let j = removed[0];
                let mult = if added[0] == added[1] { 1.0 } else { 2.0 };
                lp + (count(j) as f64 / k).ln() + (mult / (j - 1) as f64).ln()
            }
            MoveKind::Merge => {
                let (a, b) = (removed[0], removed[1]);
                let pairs = if a == b {
                    let n = count(a) as f64;
                    0.5 * n * (n - 1.0)
                } else {
                    count(a) as f64 * count(b) as f64
                };
                lp + (pairs / (0.5 * k * (k - 1.0))).ln()
            }
            MoveKind::Reslice => {
                let (a, b) = (removed[0], removed[1]);
                let (c, d) = (added[0], added[1]);
                let ordered: &[(u64, u64)] = if a == b { &[(a, b)] } else { &[(a, b), (b, a)] };
                let targets: &[(u64, u64)] = if c == d { &[(c, d)] } else { &[(c, d), (d, c)] };
                let mut total = 0.0;
                for &(f, t) in ordered {
                    let pairs = if f == t {
                        let n = count(f) as f64;
                        n * (n - 1.0)
                    } else {
                        count(f) as f64 * count(t) as f64
                    };
                    for &(f_new, t_new) in targets {
                        if f_new < f && t_new == t + (f - f_new) {
                            total += pairs * self.reslice_log_step(f - f_new).exp();
                        }
                    }
                }
                lp + (total / (k * (k - 1.0))).ln()
            }
            MoveKind::Insert => {
                let j = added[0];
                match self.insert_log_prob.get(j as usize - 1) {
                    Some(&l) => lp + l,
                    None => f64::NEG_INFINITY,
                }
            }
            MoveKind::Delete => lp + (count(removed[0]) as f64 / k).ln(),
        }
    }

    /// Largest loop after removing `removed` and adding `added`.
    fn max_after(&self, removed: &[u64], added: &[u64]) -> u64 {
        let grown = added.iter().copied().max().unwrap_or(0);
        let mut top = self.max_loop;
        while top > 0 && self.count_after(top, removed, added) == 0 {
            top -= 1;
        }
        top.max(grown)
    }

    /// `ln` of the Metropolis–Hastings ratio `π(y)q(y→x) / π(x)q(x→y)`,
    /// with `π` including the bias when one is set.
    pub(crate) fn log_acceptance(&self, c: &Change) -> f64 {
        let (r, nr) = self.removed_lengths(c);
        let removed = &r[..nr];
        let added = c.added();
        let k_x = self.loops.len() as u64;
        let k_y = k_x + c.n_add as u64 - nr as u64;
        let forward = self.log_proposal(c.kind, removed, added, &|j| self.count(j), k_x);
        let backward = self.log_proposal(
            c.kind.reverse(),
            added,
            removed,
            &|j| self.count_after(j, removed, added),
            k_y,
        );
        let bias =
            self.bias.as_ref().map_or(0.0, |b| b.at(self.max_after(removed, added)) - b.at(self.max_loop));
        self.delta_log_weight(removed, added) + backward - forward + bias
    }

    fn apply(&mut self, c: &Change) {
        let mut idx = c.remove;
        if c.n_remove == 2 && idx[0] < idx[1] {
            idx.swap(0, 1);
        }
        for &i in &idx[..c.n_remove] {
            self.remove_at(i);
        }
        for &j in c.added() {
            self.push(j);
        }
    }

    fn pick_kind(&mut self) -> MoveKind {
        let u: f64 = self.rng.random();
        let mut acc = 0.0;
        for k in MoveKind::ALL {
            acc += self.move_prob[k.index()];
            if u < acc {
                return k;
            }
        }
        MoveKind::Reslice
    }

    /// Draws a proposal; `None` when the drawn move is impossible here.
    fn draw(&mut self) -> (MoveKind, Option<Change>) {
        let kind = self.pick_kind();
        let k = self.loops.len();
        let change = match kind {
            MoveKind::Split => {
                if k == 0 {
                    return (kind, None);
                }
                let i = self.rng.random_range(0..k);
                let j = self.loops[i];
                if j < 2 {
                    return (kind, None);
                }
                let j1 = self.rng.random_range(1..j);
                Some(Change::new(kind, &[i], &[j1, j - j1]))
            }
            MoveKind::Merge => {
                if k < 2 {
                    return (kind, None);
                }
                let i = self.rng.random_range(0..k);
                let mut l = self.rng.random_range(0..k - 1);
                if l >= i {
                    l += 1;
                }
                Some(Change::new(kind, &[i, l], &[self.loops[i] + self.loops[l]]))
            }
            MoveKind::Reslice => {
                if k < 2 {
                    return (kind, None);
                }
                let i = self.rng.random_range(0..k);
                let mut l = self.rng.random_range(0..k - 1);
                if l >= i {
                    l += 1;
                }
                let s = if self.rng.random_bool(0.5) {
                    1
                } else {
                    let u: f64 = self.rng.random();
                    1 + ((1.0 - u).ln() / (1.0 - self.reslice_p).ln()).floor().max(0.0) as u64
                };
                let (a, b) = (self.loops[i], self.loops[l]);
                if s >= a {
                    return (kind, None);
                }
                Some(Change::new(kind, &[i, l], &[a - s, b + s]))
            }
            MoveKind::Insert => {
                let total = *self.insert_cdf.last().unwrap_or(&0.0);
                let u: f64 = self.rng.random::<f64>() * total;
                let j = self.insert_cdf.partition_point(|&c| c <= u).min(self.insert_cdf.len() - 1);
                Some(Change::new(kind, &[], &[j as u64 + 1]))
            }
            MoveKind::Delete => {
                if k == 0 {
                    return (kind, None);
                }
                let i = self.rng.random_range(0..k);
                Some(Change::new(kind, &[i], &[]))
            }
        };
        (kind, change)
    }

    /// One Metropolis–Hastings step; returns whether the state changed hands.
    pub fn step(&mut self) -> bool {
        let (kind, change) = self.draw();
        self.proposed[kind.index()] += 1;
        let Some(c) = change else { return false };
        let log_a = self.log_acceptance(&c);
        let accept = log_a >= 0.0 || self.rng.random::<f64>().ln() < log_a;
        if accept {
            self.apply(&c);
            self.accepted[kind.index()] += 1;
        }
        accept
    }

    /// `N` steps for canonical chains and `⌈V⌉` for grand-canonical ones,
    /// so that recording times never depend on the state.
    pub fn sweep(&mut self) {
        let steps =
            if self.target.grand_canonical { self.target.model.volume.ceil() as u64 } else { self.n_total };
        for _ in 0..steps {
            self.step();
        }
        if let Some(b) = self.bias.as_mut() {
            if b.increment > 0.0 {
                b.visit(self.max_loop);
                b.update_increment();
            }
        }
        if !self.target.grand_canonical {
            debug_assert_eq!(self.loops.iter().sum::<u64>(), self.n_total);
        }
    }

    /// Every elementary proposal from the current state with its probability.
    /// Proposals that are impossible here are omitted.
    pub(crate) fn enumerate_proposals(&self) -> Vec<(f64, Change)> {
        let k = self.loops.len();
        let mut out = Vec::new();
        let p = &self.move_prob;
        if p[MoveKind::Split.index()] > 0.0 {
            for (i, &j) in self.loops.iter().enumerate() {
                for j1 in 1..j {
                    let pr = p[0] / k as f64 / (j - 1) as f64;
                    out.push((pr, Change::new(MoveKind::Split, &[i], &[j1, j - j1])));
                }
            }
        }
        if k >= 2 {
            for i in 0..k {
                for l in 0..k {
                    if i == l {
                        continue;
                    }
                    let pr = 1.0 / (k * (k - 1)) as f64;
                    let merged = self.loops[i] + self.loops[l];
                    out.push((p[1] * pr, Change::new(MoveKind::Merge, &[i, l], &[merged])));
                    let a = self.loops[i];
                    for s in 1..a {
                        let ps = self.reslice_log_step(s).exp();
                        let add = [a - s, self.loops[l] + s];
                        out.push((p[2] * pr * ps, Change::new(MoveKind::Reslice, &[i, l], &add)));
                    }
                }
            }
        }
        if self.target.grand_canonical {
            for (j, &l) in self.insert_log_prob.iter().enumerate() {
                out.push((p[3] * l.exp(), Change::new(MoveKind::Insert, &[], &[j as u64 + 1])));
            }
            for i in 0..k {
                out.push((p[4] / k as f64, Change::new(MoveKind::Delete, &[i], &[])));
            }
        }
        out
    }

    /// Probability of moving to each configuration in one step, assembled
    /// from every elementary proposal and its acceptance probability.
    /// Rejected and impossible proposals are not listed.
    pub fn transition_probabilities(&self) -> BTreeMap<CycleCounts, f64> {
        let mut t = BTreeMap::new();
        for (p, c) in self.enumerate_proposals() {
            let a = self.log_acceptance(&c).min(0.0).exp();
            *t.entry(self.after(&c)).or_insert(0.0) += p * a;
        }
        t
    }

    /// The configuration reached by a change, without mutating the chain.
    pub(crate) fn after(&self, c: &Change) -> CycleCounts {
        let mut copy = self.clone();
        copy.apply(c);
        copy.counts()
    }
}

/// Observables recorded after each sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub chain: usize,
    pub sweep: u64,
    pub n_total: u64,
    pub n_long: u64,
    pub largest_loop: u64,
    pub energy: f64,
    /// Log-weight undoing a sampling bias; zero for unbiased runs.
    pub log_reweight: f64,
}

/// Per-sweep records and acceptance statistics of every chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRun {
    pub volume: f64,
    pub burn_in: u64,
    pub records: Vec<Vec<SweepRecord>>,
    pub acceptance_rates: BTreeMap<String, f64>,
}

/// A Monte Carlo estimate with its error bar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub mean: f64,
    /// Batch-means standard error.
    pub std_error: f64,
    pub ess: f64,
    pub n_samples: usize,
    pub acceptance_rates: BTreeMap<String, f64>,
    /// Sarle's coefficient `(skew² + 1)/kurtosis`; above 5/9 hints at two modes.
    pub bimodality: f64,
}

/// Mean, batch-means standard error and effective sample size of
/// per-chain series, using 20 batches per chain when possible.
pub fn batch_means(series: &[Vec<f64>]) -> (f64, f64, f64) {
    let weighted: Vec<Vec<(f64, f64)>> =
        series.iter().map(|s| s.iter().map(|&x| (x, 0.0)).collect()).collect();
    weighted_batch_means(&weighted)
}

/// [`batch_means`] for samples `(x, ln w)` from biased chains. Weights are
/// normalised to mean one within each chain, since every chain carries its
/// own additive constant; the mean is then `Σwx/Σw` and the error that of
/// the linearised ratio over batches.
pub fn weighted_batch_means(series: &[Vec<(f64, f64)>]) -> (f64, f64, f64) {
    let n_total: usize = series.iter().map(Vec::len).sum();
    if n_total == 0 {
        return (f64::NAN, f64::NAN, 0.0);
    }
    let series: Vec<Vec<(f64, f64)>> = series
        .iter()
        .map(|s| {
            let top = s.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
            let scale = s.iter().map(|p| (p.1 - top).exp()).sum::<f64>() / s.len() as f64;
            s.iter().map(|&(x, lw)| (x, (lw - top).exp() / scale)).collect()
        })
        .collect();
    let (sum_wx, sum_w) = series.iter().flatten().fold((0.0, 0.0), |(a, b), &(x, w)| (a + w * x, b + w));
    let mean = sum_wx / sum_w;
    let var = series.iter().flatten().map(|&(x, w)| w * (x - mean).powi(2)).sum::<f64>() / sum_w;
    let shortest = series.iter().map(Vec::len).min().unwrap_or(0);
    let n_batches = if shortest >= 40 { 20 } else { shortest.max(1) };
    let size = (shortest / n_batches).max(1);
    // per batch: mean of w·x and of w
    let mut bm: Vec<(f64, f64)> = Vec::new();
    for s in &series {
        let used = size * n_batches;
        let start = s.len() - used.min(s.len());
        for b in s[start..].chunks(size) {
            let n = b.len() as f64;
            let (a, c) = b.iter().fold((0.0, 0.0), |(a, c), &(x, w)| (a + w * x, c + w));
            bm.push((a / n, c / n));
        }
    }
    let m = bm.len() as f64;
    let a_bar = bm.iter().map(|p| p.0).sum::<f64>() / m;
    let w_bar = bm.iter().map(|p| p.1).sum::<f64>() / m;
    let ratio = a_bar / w_bar;
    let z: Vec<f64> = bm.iter().map(|&(a, c)| (a - ratio * c) / w_bar).collect();
    let z_bar = z.iter().sum::<f64>() / m;
    let bm_var =
        if bm.len() > 1 { z.iter().map(|x| (x - z_bar).powi(2)).sum::<f64>() / (m - 1.0) } else { 0.0 };
    let se = (bm_var / m).sqrt();
    let ess = if bm_var > 0.0 {
        (n_total as f64 * var / (size as f64 * bm_var)).min(n_total as f64)
    } else {
        n_total as f64
    };
    (mean, se, ess)
}

/// Sarle's coefficient from weighted samples `(x, ln w)`.
fn bimodality(xs: &[(f64, f64)]) -> f64 {
    let top = xs.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    let ws: Vec<f64> = xs.iter().map(|p| (p.1 - top).exp()).collect();
    let n: f64 = ws.iter().sum();
    let moment = |k: i32, m: f64| xs.iter().zip(&ws).map(|(p, w)| w * (p.0 - m).powi(k)).sum::<f64>() / n;
    let m = moment(1, 0.0);
    let m2 = moment(2, m);
    if m2 == 0.0 {
        return 0.0;
    }
    let skew = moment(3, m) / m2.powf(1.5);
    (skew * skew + 1.0) / (moment(4, m) / (m2 * m2))
}

impl SampleRun {
    /// Estimate of `E[f]` over the post-burn-in sweeps of all chains.
    pub fn estimate<F: Fn(&SweepRecord) -> f64>(&self, f: F) -> EstimateReport {
        let series: Vec<Vec<(f64, f64)>> = self
            .records
            .iter()
            .map(|c| c.iter().filter(|r| r.sweep >= self.burn_in).map(|r| (f(r), r.log_reweight)).collect())
            .collect();
        let (mean, std_error, ess) = weighted_batch_means(&series);
        let flat: Vec<(f64, f64)> = series.iter().flatten().copied().collect();
        EstimateReport {
            mean,
            std_error,
            ess,
            n_samples: flat.len(),
            acceptance_rates: self.acceptance_rates.clone(),
            bimodality: bimodality(&flat),
        }
    }

    pub fn long_density(&self) -> EstimateReport {
        let v = self.volume;
        self.estimate(|r| r.n_long as f64 / v)
    }

    pub fn density(&self) -> EstimateReport {
        let v = self.volume;
        self.estimate(|r| r.n_total as f64 / v)
    }

    /// CSV trace with one row per chain and sweep.
    pub fn write_trace_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::Config(format!("cannot write trace: {e}"));
        w.write_record(["chain", "sweep", "n_total", "n_long", "largest_loop", "energy", "log_reweight"])
            .map_err(io)?;
        for r in self.records.iter().flatten() {
            w.write_record([
                r.chain.to_string(),
                r.sweep.to_string(),
                r.n_total.to_string(),
                r.n_long.to_string(),
                r.largest_loop.to_string(),
                format!("{:.16e}", r.energy),
                format!("{:.16e}", r.log_reweight),
            ])
            .map_err(io)?;
        }
        w.flush().map_err(|e| Error::Config(format!("cannot write trace: {e}")))
    }
}

fn run_chains<F>(model: &FiniteVolumeModel, cfg: &SamplerConfig, make: F) -> Result<SampleRun>
where
    F: Fn(u64) -> Result<Chain> + Sync,
{
    cfg.validate()?;
    let results: Vec<Result<ChainOutput>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..cfg.n_chains)
            .map(|i| {
                let make = &make;
                scope.spawn(move || run_one(cfg, i, make(i as u64)?))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("sampler thread panicked")).collect()
    });
    let mut records = Vec::new();
    let mut proposed = [0u64; 5];
    let mut accepted = [0u64; 5];
    for r in results {
        let out = r?;
        records.push(out.records);
        for k in 0..5 {
            proposed[k] += out.proposed[k];
            accepted[k] += out.accepted[k];
        }
    }
    let acceptance_rates = MoveKind::ALL
        .iter()
        .filter(|k| proposed[k.index()] > 0)
        .map(|k| (k.name().to_string(), accepted[k.index()] as f64 / proposed[k.index()] as f64))
        .collect();
    Ok(SampleRun { volume: model.volume, burn_in: cfg.burn_in, records, acceptance_rates })
}

struct ChainOutput {
    records: Vec<SweepRecord>,
    proposed: [u64; 5],
    accepted: [u64; 5],
}

/// Runs one chain for `cfg.sweeps` sweeps, freezing any bias at the end of burn-in.
fn run_one(cfg: &SamplerConfig, index: usize, mut chain: Chain) -> Result<ChainOutput> {
    let mut records = Vec::with_capacity(cfg.sweeps as usize);
    for sweep in 0..cfg.sweeps {
        if sweep == cfg.burn_in {
            chain.freeze_bias();
        }
        chain.sweep();
        records.push(SweepRecord {
            chain: index,
            sweep,
            n_total: chain.n_total(),
            n_long: chain.n_long(),
            largest_loop: chain.largest_loop(),
            energy: chain.energy(),
            log_reweight: chain.log_reweight(),
        });
    }
    Ok(ChainOutput { records, proposed: chain.proposed, accepted: chain.accepted })
}

/// Runs `cfg.n_chains` canonical chains at particle number `n`.
pub fn sample_canonical_hyl(model: &FiniteVolumeModel, n: u64, cfg: &SamplerConfig) -> Result<SampleRun> {
    run_chains(model, cfg, |i| Chain::canonical(model, n, cfg, i))
}

/// Runs `cfg.n_chains` grand-canonical chains at the model's `μ`.
pub fn sample_grand_canonical(model: &FiniteVolumeModel, cfg: &SamplerConfig) -> Result<SampleRun> {
    run_chains(model, cfg, |i| Chain::grand_canonical(model, cfg, i))
}

/// Canonical estimate of `E[N^long]/V`.
pub fn estimate_long_density(
    model: &FiniteVolumeModel,
    n: u64,
    cfg: &SamplerConfig,
) -> Result<EstimateReport> {
    Ok(sample_canonical_hyl(model, n, cfg)?.long_density())
}
