//! Exact finite-volume computations on cycle counts.
//!
//! The free loop soup in a box of volume `V` is a family of independent
//! Poisson occupation numbers `n_j` with means `λ_j = V e^{βμj} p_{βj}(0)/j`.
//! Loops shorter than the cut-off `q` form the short sector and the rest the
//! long sector; the partial HYL weight `exp((bβ/2V)Σ_{k≥q} k²n_k²)` only
//! touches the latter. Every mass function here is kept as a natural log.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::condensate::{free_energy, solve_rho_bar, HYLParams};
use crate::error::{domain, Error, Result};
use crate::thermo::{a_scale, critical_density, density_prime, mu_of_rho, pressure, pressure_q, ModelParams};

/// Configurations the explicit long-sector enumeration may visit.
pub const ENUMERATION_CAP: u64 = 10_000_000;

/// Interaction added on top of the free loop soup.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Interaction {
    Free,
    /// Mean-field energy `(a/2V)N²` only.
    MeanField {
        a: f64,
    },
    /// Partial HYL: mean field minus the long-loop counter-term.
    Hyl(HYLParams),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FiniteVolumeModel {
    pub volume: f64,
    pub params: ModelParams,
    pub q: u64,
    pub interaction: Interaction,
    /// Chemical potential of the loop measure; only grand-canonical
    /// quantities depend on it.
    pub mu: f64,
}

/// `⌈V^{3/4}⌉`, between the fluctuation scale and the volume for every `d ≥ 3`.
pub fn default_q(volume: f64) -> u64 {
    (volume.powf(0.75).ceil() as u64).max(1)
}

impl FiniteVolumeModel {
    pub fn new(params: ModelParams, volume: f64, q: u64, interaction: Interaction, mu: f64) -> Result<Self> {
        if !(volume > 0.0 && volume.is_finite()) {
            return Err(Error::Config(format!("volume must be positive, got {volume}")));
        }
        if q == 0 || q as f64 > volume {
            return Err(Error::Config(format!("cut-off q = {q} must lie in [1, V = {volume}]")));
        }
        if !mu.is_finite() {
            return Err(Error::Config(format!("mu must be finite, got {mu}")));
        }
        match interaction {
            Interaction::MeanField { a } if !(a >= 0.0 && a.is_finite()) => {
                return Err(Error::Config(format!("a must be non-negative, got {a}")));
            }
            _ => {}
        }
        Ok(Self { volume, params, q, interaction, mu })
    }

    /// Model with the cut-off set by [`default_q`].
    pub fn with_default_q(
        params: ModelParams,
        volume: f64,
        interaction: Interaction,
        mu: f64,
    ) -> Result<Self> {
        Self::new(params, volume, default_q(volume).min(volume.floor() as u64).max(1), interaction, mu)
    }

    /// A message when `q` is not strictly between `a_scale(V)` and `V`.
    pub fn window_warning(&self) -> Option<String> {
        let lo = a_scale(&self.params, self.volume);
        let q = self.q as f64;
        if q <= lo {
            Some(format!("cut-off q = {} is not above the fluctuation scale {lo:.3}", self.q))
        } else if q >= 0.5 * self.volume {
            Some(format!("cut-off q = {} is not small against V = {}", self.q, self.volume))
        } else {
            None
        }
    }

    /// Counter-term strength `b` (zero without the HYL interaction).
    pub fn counter_strength(&self) -> f64 {
        match self.interaction {
            Interaction::Hyl(h) => h.b,
            _ => 0.0,
        }
    }

    /// Mean-field strength `a`.
    pub fn mean_field_strength(&self) -> f64 {
        match self.interaction {
            Interaction::Free => 0.0,
            Interaction::MeanField { a } => a,
            Interaction::Hyl(h) => h.a,
        }
    }

    /// `ln λ_j` at chemical potential `mu`.
    pub fn log_intensity_at(&self, j: u64, mu: f64) -> f64 {
        let p = &self.params;
        let jf = j as f64;
        self.volume.ln() + p.c_d().ln() - p.half_d() * (p.beta * jf).ln() + p.beta * mu * jf - jf.ln()
    }

    /// Exponent of the counter-term for `n` loops of length `k ≥ q`.
    pub(crate) fn counter_exponent(&self, k: u64, n: u64) -> f64 {
        let kn = (k * n) as f64;
        0.5 * self.counter_strength() * self.params.beta * kn * kn / self.volume
    }

    /// `Σ_{j<q} λ_j` at `mu ≤ 0`.
    fn short_mass(&self, mu: f64) -> Result<f64> {
        if self.q == 1 {
            return Ok(0.0);
        }
        Ok(self.volume * pressure_q(&self.params, self.q - 1, mu)?)
    }

    /// `Σ_{j≥q} λ_j` at `mu ≤ 0`.
    fn long_mass(&self, mu: f64) -> Result<f64> {
        check_finite_mass(mu)?;
        let total = pressure(&self.params, mu)?;
        let short = if self.q == 1 { 0.0 } else { pressure_q(&self.params, self.q - 1, mu)? };
        Ok(self.volume * (total - short).max(0.0))
    }
}

fn check_finite_mass(mu: f64) -> Result<()> {
    if mu > 0.0 {
        Err(Error::Divergent(format!("the loop measure has infinite mass at mu = {mu} > 0")))
    } else {
        Ok(())
    }
}

/// `λ_j = V (2πβj)^{-d/2} e^{βμj} / j`.
pub fn intensity(model: &FiniteVolumeModel, j: u64) -> Result<f64> {
    if j == 0 {
        return Err(domain("loop length must be at least 1"));
    }
    Ok(model.log_intensity_at(j, model.mu).exp())
}

/// Occupation numbers of one loop configuration.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CycleCounts {
    counts: BTreeMap<u64, u64>,
}

impl CycleCounts {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_counts<I: IntoIterator<Item = (u64, u64)>>(pairs: I) -> Result<Self> {
        let mut c = Self::new();
        for (j, n) in pairs {
            if j == 0 {
                return Err(domain("loop length must be at least 1"));
            }
            c.add(j, n);
        }
        Ok(c)
    }

    /// A single loop carrying all `n` particles.
    pub fn single_loop(n: u64) -> Self {
        let mut c = Self::new();
        c.add(n, 1);
        c
    }

    pub fn get(&self, j: u64) -> u64 {
        self.counts.get(&j).copied().unwrap_or(0)
    }

    pub fn add(&mut self, j: u64, n: u64) {
        if n > 0 {
            *self.counts.entry(j).or_insert(0) += n;
        }
    }

    /// Removes one loop of length `j`; false if there is none.
    pub fn remove_one(&mut self, j: u64) -> bool {
        match self.counts.get_mut(&j) {
            Some(n) if *n > 1 => {
                *n -= 1;
                true
            }
            Some(_) => {
                self.counts.remove(&j);
                true
            }
            None => false,
        }
    }

    /// `(j, n_j)` for every occupied length, in increasing `j`.
    pub fn iter(&self) -> impl Iterator<Item = (u64, u64)> + '_ {
        self.counts.iter().map(|(&j, &n)| (j, n))
    }

    pub fn n_loops(&self) -> u64 {
        self.counts.values().sum()
    }

    pub fn n_total(&self) -> u64 {
        self.iter().map(|(j, n)| j * n).sum()
    }

    pub fn n_short(&self, q: u64) -> u64 {
        self.iter().filter(|&(j, _)| j < q).map(|(j, n)| j * n).sum()
    }

    pub fn n_long(&self, q: u64) -> u64 {
        self.iter().filter(|&(j, _)| j >= q).map(|(j, n)| j * n).sum()
    }

    pub fn largest_loop(&self) -> u64 {
        self.counts.keys().next_back().copied().unwrap_or(0)
    }

    /// `(b/2V) Σ_{k≥q} k² n_k²`, the counter-term energy with its sign flipped.
    pub fn counter_term(&self, q: u64, b: f64, volume: f64) -> f64 {
        let s: f64 = self
            .iter()
            .filter(|&(j, _)| j >= q)
            .map(|(j, n)| {
                let kn = (j * n) as f64;
                kn * kn
            })
            .sum();
        0.5 * b * s / volume
    }

    /// `ln Π_j λ_j^{n_j}/n_j!` under the loop measure at `mu`.
    pub fn log_free_weight(&self, model: &FiniteVolumeModel, mu: f64) -> f64 {
        self.iter()
            .map(|(j, n)| n as f64 * model.log_intensity_at(j, mu) - libm::lgamma(n as f64 + 1.0))
            .sum()
    }
}

/// Streaming `ln Σ e^{x_i}`.
#[derive(Clone, Copy)]
pub(crate) struct LogSum {
    max: f64,
    scaled: f64,
}

impl LogSum {
    pub(crate) fn new() -> Self {
        Self { max: f64::NEG_INFINITY, scaled: 0.0 }
    }

    pub(crate) fn add(&mut self, x: f64) {
        if x == f64::NEG_INFINITY {
            return;
        }
        if x > self.max {
            self.scaled = self.scaled * (self.max - x).exp() + 1.0;
            self.max = x;
        } else {
            self.scaled += (x - self.max).exp();
        }
    }

    pub(crate) fn value(&self) -> f64 {
        if self.max == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else {
            self.max + self.scaled.ln()
        }
    }
}

/// `ln g(n)`, `n = 0..=n_max`, for the compound-Poisson law with
/// intensities `λ_j` on `j ∈ [j_lo, j_hi]`, via `n g(n) = Σ_j jλ_j g(n−j)`.
fn log_compound_poisson(
    model: &FiniteVolumeModel,
    mu: f64,
    j_lo: u64,
    j_hi: u64,
    log_g0: f64,
    n_max: u64,
) -> Vec<f64> {
    let n_max = n_max as usize;
    let j_hi = j_hi.min(n_max as u64) as usize;
    let log_jl: Vec<f64> = (0..=j_hi)
        .map(|j| {
            if j == 0 || (j as u64) < j_lo {
                f64::NEG_INFINITY
            } else {
                model.log_intensity_at(j as u64, mu) + (j as f64).ln()
            }
        })
        .collect();
    let mut g = vec![f64::NEG_INFINITY; n_max + 1];
    g[0] = log_g0;
    let j_lo = j_lo.max(1) as usize;
    for n in 1..=n_max {
        let mut acc = LogSum::new();
        for j in j_lo..=j_hi.min(n) {
            acc.add(log_jl[j] + g[n - j]);
        }
        g[n] = acc.value() - (n as f64).ln();
    }
    g
}

/// `ln P(N_Λ = n)` under the free loop measure at the model's `μ ≤ 0`.
pub fn log_free_canonical_pmf(model: &FiniteVolumeModel, n_max: u64) -> Result<Vec<f64>> {
    check_finite_mass(model.mu)?;
    let total = model.volume * pressure(&model.params, model.mu)?;
    Ok(log_compound_poisson(model, model.mu, 1, n_max, -total, n_max))
}

/// `P(N_Λ = n)` for `n = 0..=n_max`.
pub fn free_canonical_pmf(model: &FiniteVolumeModel, n_max: u64) -> Result<Vec<f64>> {
    Ok(log_free_canonical_pmf(model, n_max)?.into_iter().map(f64::exp).collect())
}

/// `ln P(N^short = n)` at the model's `μ ≤ 0`.
pub fn log_short_pmf(model: &FiniteVolumeModel, n_max: u64) -> Result<Vec<f64>> {
    check_finite_mass(model.mu)?;
    short_pmf_at(model, model.mu, n_max)
}

fn short_pmf_at(model: &FiniteVolumeModel, mu: f64, n_max: u64) -> Result<Vec<f64>> {
    let mass = model.short_mass(mu)?;
    if model.q == 1 {
        let mut g = vec![f64::NEG_INFINITY; n_max as usize + 1];
        g[0] = 0.0;
        return Ok(g);
    }
    Ok(log_compound_poisson(model, mu, 1, model.q - 1, -mass, n_max))
}

/// `ln` of `e^{−Σ_{j≥q}λ_j} Σ Π_k λ_k^{n_k}/n_k! · e^{(bβ/2V)Σ k²n_k²}` over
/// long configurations with `Σ k n_k = m`, for `m = 0..=m_max`, computed by
/// adding one loop length at a time. With `b = 0` this is `ln P(N^long = m)`.
fn long_weights_at(model: &FiniteVolumeModel, mu: f64, m_max: u64) -> Result<Vec<f64>> {
    let mass = model.long_mass(mu)?;
    let size = m_max as usize + 1;
    let mut w = vec![f64::NEG_INFINITY; size];
    w[0] = 0.0;
    let with_counter = model.counter_strength() > 0.0;
    let q = model.q as usize;
    if !with_counter {
        // Without the counter-term the long sector is compound Poisson too.
        let g = log_compound_poisson(model, mu, model.q, m_max, -mass, m_max);
        return Ok(g);
    }
    for k in q..size {
        let log_l = model.log_intensity_at(k as u64, mu);
        let max_n = (size - 1) / k;
        let log_f: Vec<f64> = (0..=max_n)
            .map(|n| {
                n as f64 * log_l - libm::lgamma(n as f64 + 1.0) + model.counter_exponent(k as u64, n as u64)
            })
            .collect();
        for m in (k..size).rev() {
            let mut acc = LogSum::new();
            acc.add(w[m]);
            let mut n = 1;
            while n * k <= m {
                acc.add(w[m - n * k] + log_f[n]);
                n += 1;
            }
            w[m] = acc.value();
        }
    }
    for v in &mut w {
        *v -= mass;
    }
    Ok(w)
}

/// `ln P(N^long = x)`, `x = 0..=x_max`, under the free measure at `μ ≤ 0`.
pub fn log_long_mass_table(model: &FiniteVolumeModel, x_max: u64) -> Result<Vec<f64>> {
    check_finite_mass(model.mu)?;
    let free = FiniteVolumeModel { interaction: Interaction::Free, ..*model };
    long_weights_at(&free, model.mu, x_max)
}

/// `P(N^long = x)` under the free measure.
pub fn long_mass_pmf(model: &FiniteVolumeModel, x: u64) -> Result<f64> {
    Ok(log_long_mass_table(model, x)?[x as usize].exp())
}

/// Number of partitions of `m` into parts `≥ q`, saturating at `u64::MAX`.
pub fn count_long_partitions(q: u64, m: u64) -> u64 {
    let size = m as usize + 1;
    let mut c = vec![0u64; size];
    c[0] = 1;
    for k in (q.max(1) as usize)..size {
        for s in k..size {
            c[s] = c[s].saturating_add(c[s - k]);
        }
    }
    c[m as usize]
}

/// Every multiset of loop lengths `≥ q` summing to `m`.
///
/// Fails with [`Error::Combinatorial`] rather than truncating when there are
/// more than `cap` of them.
pub fn enumerate_long_configurations(q: u64, m: u64, cap: u64) -> Result<Vec<CycleCounts>> {
    let count = count_long_partitions(q, m);
    if count > cap {
        return Err(Error::Combinatorial { count, cap });
    }
    let mut out = Vec::with_capacity(count as usize);
    let mut parts = Vec::new();
    fill_partitions(m, m, q.max(1), &mut parts, &mut out);
    Ok(out)
}

fn fill_partitions(rest: u64, max_part: u64, q: u64, parts: &mut Vec<u64>, out: &mut Vec<CycleCounts>) {
    if rest == 0 {
        let mut c = CycleCounts::new();
        for &p in parts.iter() {
            c.add(p, 1);
        }
        out.push(c);
        return;
    }
    let mut k = max_part.min(rest);
    while k >= q {
        parts.push(k);
        fill_partitions(rest - k, k, q, parts, out);
        parts.pop();
        k -= 1;
    }
}

/// `P(N^long = x)` by explicit enumeration of long configurations.
pub fn long_mass_pmf_enumerated(model: &FiniteVolumeModel, x: u64, cap: u64) -> Result<f64> {
    check_finite_mass(model.mu)?;
    let mass = model.long_mass(model.mu)?;
    let mut acc = LogSum::new();
    for c in enumerate_long_configurations(model.q, x, cap)? {
        acc.add(c.log_free_weight(model, model.mu));
    }
    Ok((acc.value() - mass).exp())
}

/// Exact partial HYL partition functions at fixed particle number.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CanonicalPartition {
    pub n: u64,
    /// `ln E_0[e^{(bβ/2V)Σ_{k≥q}k²n_k²}; N_Λ = N]` under the `μ = 0` loop measure.
    pub log_z: f64,
    /// `ln P_0(N_Λ = N)`.
    pub log_p_n: f64,
    /// `ln E_0[e^{(bβ/2V)Σ_{k≥q}k²n_k²} | N_Λ = N]`.
    pub log_z_canonical: f64,
    /// Probability of each value of `N^long` under the tilted canonical law.
    pub long_spectrum: BTreeMap<u64, f64>,
}

impl CanonicalPartition {
    /// `E[N^long]` under the tilted canonical law.
    pub fn mean_long(&self) -> f64 {
        self.long_spectrum.iter().map(|(&m, &p)| m as f64 * p).sum()
    }

    /// The most probable value of `N^long`.
    pub fn dominant_long(&self) -> u64 {
        self.long_spectrum
            .iter()
            .fold((0, f64::NEG_INFINITY), |best, (&m, &p)| if p > best.1 { (m, p) } else { best })
            .0
    }
}

/// Joint log weights `ln w(m)` of `N^long = m` and `N^short = n − m`.
fn joint_long_split(model: &FiniteVolumeModel, n: u64) -> Result<Vec<f64>> {
    let short = short_pmf_at(model, 0.0, n)?;
    let long = long_weights_at(model, 0.0, n)?;
    Ok((0..=n as usize).map(|m| long[m] + short[n as usize - m]).collect())
}

/// Partial HYL partition function at particle number `n`; only the
/// counter-term enters since the mean-field energy is constant.
pub fn canonical_hyl_partition(model: &FiniteVolumeModel, n: u64) -> Result<CanonicalPartition> {
    let split = joint_long_split(model, n)?;
    let mut acc = LogSum::new();
    for &w in &split {
        acc.add(w);
    }
    let log_z = acc.value();
    let free = FiniteVolumeModel { mu: 0.0, ..*model };
    let log_p_n = log_free_canonical_pmf(&free, n)?[n as usize];
    let long_spectrum = split
        .iter()
        .enumerate()
        .filter(|(_, &w)| w > f64::NEG_INFINITY)
        .map(|(m, &w)| (m as u64, (w - log_z).exp()))
        .collect();
    Ok(CanonicalPartition { n, log_z, log_p_n, log_z_canonical: log_z - log_p_n, long_spectrum })
}

/// `E[N^long]/V` under the exact canonical partial HYL law.
pub fn long_loop_density_exact(model: &FiniteVolumeModel, n: u64) -> Result<f64> {
    Ok(canonical_hyl_partition(model, n)?.mean_long() / model.volume)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShortSectorCheck {
    pub pmf_short: f64,
    pub pmf_full: f64,
    pub ratio: f64,
    pub log_ratio: f64,
}

/// Compares `P(N^short = y)` with `P(N_Λ = y)` for `y ≤ (ρ_c − ε)V`.
pub fn short_sector_check(model: &FiniteVolumeModel, y: u64, epsilon: f64) -> Result<ShortSectorCheck> {
    let limit = (critical_density(&model.params) - epsilon) * model.volume;
    if y as f64 > limit {
        return Err(domain(format!("y = {y} exceeds (rho_c - epsilon) V = {limit}")));
    }
    let short = log_short_pmf(model, y)?[y as usize];
    let full = log_free_canonical_pmf(model, y)?[y as usize];
    Ok(ShortSectorCheck {
        pmf_short: short.exp(),
        pmf_full: full.exp(),
        ratio: (short - full).exp(),
        log_ratio: short - full,
    })
}

/// Exact canonical partition function against its large-volume form
/// `K · e^{S_1 V} βVc_d / (βρ̄V)^{d/2+1}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PartitionAsymptotics {
    pub volume: f64,
    pub n: u64,
    pub rho: f64,
    pub rho_bar: f64,
    pub s1: f64,
    pub log_z_exact: f64,
    /// Prefactor `K = √(1 + b/𝛍'(ρ − ρ̄))`.
    pub prefactor_stated: f64,
    /// Laplace prefactor `K = 1/√(1 − b/𝛍'(ρ − ρ̄))`.
    pub prefactor_laplace: f64,
    pub ratio_stated: f64,
    pub ratio_laplace: f64,
    /// `−ln Z^{Can}/(βV)`.
    pub free_energy_exact: f64,
    pub free_energy_limit: f64,
}

pub fn partition_asymptotics(model: &FiniteVolumeModel, n: u64) -> Result<PartitionAsymptotics> {
    let hyl = match model.interaction {
        Interaction::Hyl(h) => h,
        _ => return Err(Error::Config("partition asymptotics need the HYL interaction".into())),
    };
    let p = &model.params;
    let v = model.volume;
    let rho = n as f64 / v;
    let sol = solve_rho_bar(p, &hyl, rho)?;
    if sol.rho_bar <= 0.0 {
        return Err(domain(format!("density {rho} has no condensate")));
    }
    let s1 = sol.s1(p, &hyl);
    let mu_prime = 1.0 / density_prime(p, mu_of_rho(p, sol.rho_free)?)?;
    let prefactor_stated = (1.0 + hyl.b / mu_prime).sqrt();
    let prefactor_laplace = 1.0 / (1.0 - hyl.b / mu_prime).sqrt();
    let log_base =
        s1 * v + (p.beta * v * p.c_d()).ln() - (p.half_d() + 1.0) * (p.beta * sol.rho_bar * v).ln();
    let z = canonical_hyl_partition(model, n)?;
    Ok(PartitionAsymptotics {
        volume: v,
        n,
        rho,
        rho_bar: sol.rho_bar,
        s1,
        log_z_exact: z.log_z,
        prefactor_stated,
        prefactor_laplace,
        ratio_stated: (z.log_z - log_base - prefactor_stated.ln()).exp(),
        ratio_laplace: (z.log_z - log_base - prefactor_laplace.ln()).exp(),
        free_energy_exact: -z.log_z_canonical / (p.beta * v),
        free_energy_limit: free_energy(p, &hyl, rho)?,
    })
}

/// Exact grand-canonical particle statistics of the finite-volume model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrandCanonicalExact {
    pub mean_density: f64,
    pub mean_long_density: f64,
    /// Largest particle number included in the sums.
    pub n_max: u64,
    /// `P(N_Λ = n)` for `n = 0..=n_max`.
    pub particle_pmf: Vec<f64>,
}

/// Sums `e^{βμN − βaN²/2V} Z_0(N)` over `N`, where `Z_0` is the joint
/// partition function under the `μ = 0` loop measure.
///
/// Without a mean-field term this needs `μ ≤ 0`; `n_max` is grown until the
/// last included weight is below `e^{-40}` of the largest.
pub fn grand_canonical_exact(model: &FiniteVolumeModel) -> Result<GrandCanonicalExact> {
    let a = model.mean_field_strength();
    let b = model.counter_strength();
    if a == 0.0 && model.mu > 0.0 {
        return Err(Error::Config(format!(
            "the free grand-canonical measure is undefined at mu = {} > 0",
            model.mu
        )));
    }
    if b > 0.0 && a <= b {
        return Err(Error::Config(format!("grand-canonical HYL needs a > b, got a = {a}, b = {b}")));
    }
    let beta = model.params.beta;
    let v = model.volume;
    let rho_guess =
        critical_density(&model.params) + if a > 0.0 { (model.mu.max(0.0) + 1.0) / (a - b) } else { 0.0 };
    let mut n_max = ((2.0 * rho_guess * v) as u64).max(64);
    loop {
        let short = short_pmf_at(model, 0.0, n_max)?;
        let long = long_weights_at(model, 0.0, n_max)?;
        let size = n_max as usize + 1;
        let mut log_w = vec![f64::NEG_INFINITY; size];
        let mut log_long = vec![f64::NEG_INFINITY; size];
        for (n, lw) in log_w.iter_mut().enumerate() {
            let nf = n as f64;
            let tilt = beta * model.mu * nf - 0.5 * beta * a * nf * nf / v;
            let mut acc = LogSum::new();
            let mut acc_long = LogSum::new();
            for m in 0..=n {
                let t = long[m] + short[n - m];
                acc.add(t);
                if m > 0 {
                    acc_long.add(t + (m as f64).ln());
                }
            }
            *lw = acc.value() + tilt;
            log_long[n] = acc_long.value() + tilt;
        }
        let top = log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let tail = log_w[size - 1].max(log_w[size - 2]);
        if tail < top - 40.0 {
            let mut total = LogSum::new();
            for &w in &log_w {
                total.add(w);
            }
            let log_total = total.value();
            let pmf: Vec<f64> = log_w.iter().map(|w| (w - log_total).exp()).collect();
            let mean_n: f64 = pmf.iter().enumerate().map(|(n, p)| n as f64 * p).sum();
            let mean_long: f64 = log_long.iter().map(|w| (w - log_total).exp()).sum();
            return Ok(GrandCanonicalExact {
                mean_density: mean_n / v,
                mean_long_density: mean_long / v,
                n_max,
                particle_pmf: pmf,
            });
        }
        if n_max > 1 << 22 {
            return Err(Error::Convergence("grand-canonical particle number is not tight".into()));
        }
        n_max *= 2;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn model(volume: f64, q: u64, b: f64, mu: f64) -> FiniteVolumeModel {
        let p = ModelParams::new(3, 1.0).unwrap();
        let interaction =
            if b > 0.0 { Interaction::Hyl(HYLParams::new(2.0, b).unwrap()) } else { Interaction::Free };
        FiniteVolumeModel::new(p, volume, q, interaction, mu).unwrap()
    }

    #[test]
    fn intensity_values() {
        let m = model(1.0, 1, 0.0, 0.0);
        let l1 = intensity(&m, 1).unwrap();
        assert!((l1 - (2.0 * std::f64::consts::PI).powf(-1.5)).abs() < 1e-15);
        let m = model(7.0, 1, 0.0, -0.3);
        for j in [1u64, 3, 10] {
            let r = intensity(&m, 2 * j).unwrap() / intensity(&m, j).unwrap();
            let expect = 2f64.powf(-2.5) * (-0.3 * j as f64).exp();
            assert!((r / expect - 1.0).abs() < 1e-12);
        }
        assert!(intensity(&m, 0).is_err());
    }

    #[test]
    fn intensities_resum_to_density() {
        let m = model(3.0, 1, 0.0, -0.2);
        let s: f64 = (1..4000u64).map(|j| j as f64 * intensity(&m, j).unwrap()).sum();
        let rho = crate::thermo::density(&m.params, -0.2).unwrap();
        assert!((s / 3.0 / rho - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pmf_first_terms() {
        let m = model(5.0, 1, 0.0, 0.0);
        let pmf = free_canonical_pmf(&m, 3).unwrap();
        let total = 5.0 * pressure(&m.params, 0.0).unwrap();
        assert!((pmf[0] / (-total).exp() - 1.0).abs() < 1e-14);
        assert!((pmf[1] / (intensity(&m, 1).unwrap() * pmf[0]) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn rejects_bad_models() {
        let p = ModelParams::new(3, 1.0).unwrap();
        assert!(FiniteVolumeModel::new(p, 10.0, 0, Interaction::Free, 0.0).is_err());
        assert!(FiniteVolumeModel::new(p, 10.0, 11, Interaction::Free, 0.0).is_err());
        assert!(FiniteVolumeModel::new(p, -1.0, 1, Interaction::Free, 0.0).is_err());
        let m = model(5.0, 1, 0.0, 0.1);
        assert!(matches!(free_canonical_pmf(&m, 3), Err(Error::Divergent(_))));
    }

    #[test]
    fn window_warning_flags_small_cutoff() {
        let m = model(1000.0, 10, 0.0, 0.0);
        assert!(m.window_warning().is_some());
        let m = FiniteVolumeModel::with_default_q(m.params, 1000.0, Interaction::Free, 0.0).unwrap();
        assert_eq!(m.q, 178);
        assert!(m.window_warning().is_none());
    }

    #[test]
    fn long_mass_small_values() {
        let m = model(50.0, 7, 0.0, 0.0);
        let mass = m.long_mass(0.0).unwrap();
        assert!((long_mass_pmf(&m, 0).unwrap() / (-mass).exp() - 1.0).abs() < 1e-13);
        let at_q = intensity(&m, 7).unwrap() * (-mass).exp();
        assert!((long_mass_pmf(&m, 7).unwrap() / at_q - 1.0).abs() < 1e-13);
        assert_eq!(long_mass_pmf(&m, 5).unwrap(), 0.0);
    }

    #[test]
    fn long_mass_matches_enumeration() {
        let m = model(20.0, 3, 0.0, -0.1);
        for x in [0u64, 3, 6, 11, 25] {
            let dp = long_mass_pmf(&m, x).unwrap();
            let en = long_mass_pmf_enumerated(&m, x, ENUMERATION_CAP).unwrap();
            assert!((dp - en).abs() <= 1e-12 * en.max(1e-300), "{x}: {dp} vs {en}");
        }
    }

    #[test]
    fn enumeration_respects_cap() {
        assert_eq!(count_long_partitions(1, 10), 42);
        assert_eq!(count_long_partitions(3, 9), 4);
        let e = enumerate_long_configurations(1, 60, 1000).unwrap_err();
        assert!(matches!(e, Error::Combinatorial { count: 966467, cap: 1000 }));
        let all = enumerate_long_configurations(3, 9, 10).unwrap();
        assert_eq!(all.len(), 4);
        assert!(all.iter().all(|c| c.n_total() == 9 && c.iter().all(|(j, _)| j >= 3)));
    }

    #[test]
    fn counter_term_dp_matches_enumeration() {
        let m = model(15.0, 2, 1.0, 0.0);
        let w = long_weights_at(&m, 0.0, 18).unwrap();
        let mass = m.long_mass(0.0).unwrap();
        for x in [0u64, 2, 5, 12, 18] {
            let mut acc = LogSum::new();
            for c in enumerate_long_configurations(2, x, ENUMERATION_CAP).unwrap() {
                acc.add(c.log_free_weight(&m, 0.0) + m.params.beta * c.counter_term(2, 1.0, 15.0));
            }
            let e = acc.value() - mass;
            assert!((w[x as usize] - e).abs() < 1e-12, "{x}: {} vs {e}", w[x as usize]);
        }
    }

    #[test]
    fn hamiltonian_bound_on_configurations() {
        let (q, v, b) = (3u64, 10.0, 1.0);
        for m in q..=24 {
            for c in enumerate_long_configurations(q, m, ENUMERATION_CAP).unwrap() {
                let nl = c.n_long(q) as f64;
                let h = c.counter_term(q, b, v);
                let bound = 0.5 * b * nl * nl / v;
                assert!(h <= bound + 1e-12);
                let one_length = c.iter().count() == 1;
                assert_eq!((h - bound).abs() < 1e-12, one_length, "{c:?}");
            }
        }
    }

    #[test]
    fn sectors_factorise() {
        let m = model(40.0, 6, 0.0, 0.0);
        let n_max = 60;
        let full = log_free_canonical_pmf(&m, n_max).unwrap();
        let short = log_short_pmf(&m, n_max).unwrap();
        let long = log_long_mass_table(&m, n_max).unwrap();
        for n in 0..=n_max as usize {
            let mut acc = LogSum::new();
            for k in 0..=n {
                acc.add(short[n - k] + long[k]);
            }
            assert!((acc.value() - full[n]).abs() < 1e-12, "{n}");
        }
    }

    #[test]
    fn zero_counter_term_gives_free_canonical() {
        let m = model(30.0, 5, 0.0, 0.0);
        let z = canonical_hyl_partition(&m, 40).unwrap();
        assert!(z.log_z_canonical.abs() < 1e-12);
        assert!((z.long_spectrum.values().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn no_long_loops_below_cutoff() {
        let m = model(30.0, 20, 1.0, 0.0);
        let z = canonical_hyl_partition(&m, 12).unwrap();
        let short = log_short_pmf(&FiniteVolumeModel { interaction: Interaction::Free, ..m }, 12).unwrap();
        let long_mass = m.long_mass(0.0).unwrap();
        assert!((z.log_z - (short[12] - long_mass)).abs() < 1e-12);
        assert_eq!(z.long_spectrum.len(), 1);
        assert_eq!(long_loop_density_exact(&m, 12).unwrap(), 0.0);
    }

    #[test]
    fn short_sector_identity() {
        let m = model(200.0, 15, 0.0, 0.0);
        let check = short_sector_check(&m, 0, 0.01).unwrap();
        let expect = m.long_mass(0.0).unwrap();
        assert!((check.log_ratio - expect).abs() < 1e-12);
        assert!(check.ratio > 1.0);
        let y = 12;
        let check = short_sector_check(&m, y, 0.01).unwrap();
        // P(no long loop | N = y) = P_short(y) P(no long loop) / P(N = y).
        let long = log_long_mass_table(&m, y).unwrap();
        let p_no_long = (check.log_ratio + long[0]).exp();
        let full = log_free_canonical_pmf(&m, y).unwrap();
        let short = log_short_pmf(&m, y).unwrap();
        let with_long: f64 =
            (1..=y as usize).map(|k| (short[y as usize - k] + long[k] - full[y as usize]).exp()).sum();
        assert!((p_no_long + with_long - 1.0).abs() < 1e-12);
        assert!(short_sector_check(&m, 1000, 0.01).is_err());
    }

    #[test]
    fn grand_canonical_free_matches_density() {
        let m = model(10.0, 3, 0.0, -0.5);
        let gc = grand_canonical_exact(&m).unwrap();
        let rho = crate::thermo::density(&m.params, -0.5).unwrap();
        assert!((gc.mean_density / rho - 1.0).abs() < 1e-10);
        let mf = FiniteVolumeModel { interaction: Interaction::MeanField { a: 1.0 }, mu: 0.5, ..m };
        assert!(grand_canonical_exact(&mf).unwrap().mean_density > 0.0);
        let bad = FiniteVolumeModel { mu: 0.5, ..m };
        assert!(grand_canonical_exact(&bad).is_err());
    }

    #[test]
    fn cycle_counts_bookkeeping() {
        let mut c = CycleCounts::from_counts([(1, 3), (4, 1), (9, 2)]).unwrap();
        assert_eq!(c.n_total(), 3 + 4 + 18);
        assert_eq!(c.n_short(5), 7);
        assert_eq!(c.n_long(5), 18);
        assert_eq!(c.largest_loop(), 9);
        assert!(c.remove_one(4));
        assert!(!c.remove_one(4));
        assert_eq!(c.n_loops(), 5);
        assert!((c.counter_term(5, 2.0, 3.0) - 18.0 * 18.0 / 3.0).abs() < 1e-12);
        assert!(CycleCounts::from_counts([(0, 1)]).is_err());
    }

    proptest! {
        #[test]
        fn pmf_is_subprobability(v in 1.0f64..20.0, mu in -2.0f64..0.0) {
            let m = model(v, 1, 0.0, mu);
            let pmf = free_canonical_pmf(&m, 80).unwrap();
            let s: f64 = pmf.iter().sum();
            prop_assert!(pmf.iter().all(|&p| (0.0..=1.0).contains(&p)));
            prop_assert!(s <= 1.0 + 1e-12);
        }

        #[test]
        fn counts_split_into_sectors(pairs in proptest::collection::vec((1u64..40, 0u64..5), 0..8), q in 1u64..40) {
            let c = CycleCounts::from_counts(pairs).unwrap();
            prop_assert_eq!(c.n_total(), c.n_short(q) + c.n_long(q));
        }
    }
}
