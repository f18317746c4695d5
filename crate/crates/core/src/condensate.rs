//! The condensate variational problem of the partial HYL gas.
//!
//! For a total density `ρ` the condensate density `ρ̄` maximises
//!
//! ```text
//! R_ρ(y) = bβy²/2 − I_0(ρ − y),    y ∈ [max(ρ − ρ_c, 0), ρ)
//! ```
//!
//! Below `ρ_c` this is the subcritical objective; above it, writing
//! `y = x + ρ_e` with `ρ_e = ρ − ρ_c`, it equals `Q(x) − I_0(ρ_c − x)` plus
//! the constant `bβρ_e²/2`, where `Q(x) = (βb/2)[(x + ρ_e)² − ρ_e²]`.
//! The second derivative `R'' = β(b − 𝛍'(ρ − y))` is decreasing in `y`,
//! so `R'` is concave and has at most two zeros. The solver locates the
//! maximum of `R'`, takes the right zero as the only interior candidate
//! and compares it with the left endpoint.

use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::roots::{brent, golden_max};
use crate::thermo::{critical_density, density_prime, mu_of_rho, pressure_shift, rate_i, ModelParams};

/// Interaction strengths of the partial HYL Hamiltonian.
///
/// Canonical quantities only use `b`; grand-canonical ones need `a > b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HYLParams {
    pub a: f64,
    pub b: f64,
}

impl HYLParams {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if !(b > 0.0 && b.is_finite()) {
            return Err(Error::Config(format!("b must be positive, got {b}")));
        }
        if !(a >= 0.0 && a.is_finite()) {
            return Err(Error::Config(format!("a must be non-negative, got {a}")));
        }
        Ok(Self { a, b })
    }

    fn require_grand_canonical(&self) -> Result<()> {
        if self.a > self.b {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "grand-canonical quantities need a > b, got a = {}, b = {}",
                self.a, self.b
            )))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    /// The maximiser is the left endpoint: no condensate beyond `ρ_e`.
    Zero,
    /// The maximiser is the right zero of `R'`.
    Interior,
    /// Both candidates attain the maximum within tolerance.
    Coexistence,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CondensateSolution {
    pub rho_total: f64,
    pub rho_e: f64,
    pub rho_s: f64,
    pub rho_bar: f64,
    /// Free-loop density `ρ − ρ̄`, kept separately to avoid cancellation.
    pub rho_free: f64,
    /// `S_0` above `ρ_c`, `S_1` below.
    pub s_value: f64,
    pub branch: Branch,
    /// `R''` at the maximiser on the interior and coexistence branches.
    pub objective_curvature: Option<f64>,
    /// At coexistence, the condensate density of the zero branch.
    pub coexisting_rho_bar: Option<f64>,
}

impl CondensateSolution {
    /// `S_1 = sup_y R_ρ(y)`, equal to `S_0 + bβρ_e²/2`.
    pub fn s1(&self, params: &ModelParams, hyl: &HYLParams) -> f64 {
        self.s_value + 0.5 * hyl.b * params.beta * self.rho_e * self.rho_e
    }
}

/// Coexistence is declared when the two candidate values agree to this
/// relative tolerance.
pub const COEXISTENCE_TOL: f64 = 1e-10;

/// `Q(x) − I_0(ρ_c − x)` for `rho_o > ρ_c`, `bβx²/2 − I_0(ρ_o − x)` otherwise.
pub fn excess_objective(params: &ModelParams, hyl: &HYLParams, rho_o: f64, x: f64) -> Result<f64> {
    let (rho_e, u) = excess_coordinates(params, rho_o, x)?;
    let beta = params.beta;
    let q = 0.5 * beta * hyl.b * ((x + rho_e) * (x + rho_e) - rho_e * rho_e);
    Ok(q - rate_i(params, 0.0, u)?)
}

/// Derivative of [`excess_objective`] in `x`: `βb(x + ρ_e) + β𝛍(ρ_o − ρ_e − x)`.
pub fn excess_objective_derivative(params: &ModelParams, hyl: &HYLParams, rho_o: f64, x: f64) -> Result<f64> {
    let (rho_e, u) = excess_coordinates(params, rho_o, x)?;
    let mu = if u > 0.0 { mu_of_rho(params, u)? } else { f64::NEG_INFINITY };
    Ok(params.beta * (hyl.b * (x + rho_e) + mu))
}

/// `(ρ_e, ρ_o − ρ_e − x)` after checking `x ∈ [0, min(ρ_o, ρ_c)]`.
fn excess_coordinates(params: &ModelParams, rho_o: f64, x: f64) -> Result<(f64, f64)> {
    if !(rho_o > 0.0) {
        return Err(domain(format!("density must be positive, got {rho_o}")));
    }
    let rho_c = critical_density(params);
    let top = rho_o.min(rho_c);
    if !(0.0..=top).contains(&x) {
        return Err(domain(format!("x = {x} lies outside [0, {top}]")));
    }
    let rho_e = (rho_o - rho_c).max(0.0);
    Ok((rho_e, (rho_o - rho_e - x).max(0.0)))
}

/// `R_ρ` and its derivatives written in the free density `u = ρ − y`.
struct Objective<'a> {
    params: &'a ModelParams,
    b: f64,
    rho: f64,
}

impl Objective<'_> {
    fn value(&self, u: f64) -> Result<f64> {
        let y = self.rho - u;
        Ok(0.5 * self.b * self.params.beta * y * y - rate_i(self.params, 0.0, u)?)
    }

    fn slope(&self, u: f64) -> f64 {
        if u <= 0.0 {
            return f64::NEG_INFINITY;
        }
        let mu = mu_of_rho(self.params, u).unwrap_or(f64::NAN);
        self.params.beta * (self.b * (self.rho - u) + mu)
    }

    fn curvature(&self, u: f64) -> Result<f64> {
        let mu = mu_of_rho(self.params, u)?;
        let mu_prime = match density_prime(self.params, mu) {
            Ok(v) => 1.0 / v,
            Err(Error::Divergent(_)) => 0.0,
            Err(e) => return Err(e),
        };
        Ok(self.params.beta * (self.b - mu_prime))
    }
}

/// Candidates for the maximiser of `R_ρ`.
struct Candidates {
    /// Free density `u` at the left endpoint `y = max(ρ − ρ_c, 0)`.
    u_edge: f64,
    edge_value: f64,
    /// Right zero of `R'` (in `u`) and the value there, if `R'` turns positive.
    interior: Option<(f64, f64)>,
}

fn candidates(params: &ModelParams, b: f64, rho: f64) -> Result<Candidates> {
    let obj = Objective { params, b, rho };
    let rho_c = critical_density(params);
    let u_edge = rho.min(rho_c);
    let edge_value = obj.value(u_edge)?;
    // R' is concave; find its maximum over u ∈ (0, u_edge].
    let (u_peak, slope_peak) = golden_max(|u| obj.slope(u), 0.0, u_edge, 1e-13 * u_edge);
    if slope_peak.is_nan() {
        return Err(Error::Convergence(format!("objective slope is NaN at density {rho}")));
    }
    if slope_peak <= 0.0 {
        return Ok(Candidates { u_edge, edge_value, interior: None });
    }
    // R' → −∞ as u ↓ 0; shrink towards zero until it is negative.
    let mut u_lo = 0.5 * u_peak;
    while obj.slope(u_lo) >= 0.0 {
        u_lo *= 0.5;
        if u_lo < 1e-300 {
            return Err(Error::Convergence(format!(
                "no sign change of the condensate slope at density {rho}"
            )));
        }
    }
    let u_star = brent(|u| obj.slope(u), u_lo, u_peak, 0.0)?;
    Ok(Candidates { u_edge, edge_value, interior: Some((u_star, obj.value(u_star)?)) })
}

/// Maximiser structure of the condensate problem at total density `rho`.
pub fn solve_rho_bar(params: &ModelParams, hyl: &HYLParams, rho: f64) -> Result<CondensateSolution> {
    if !(rho > 0.0 && rho.is_finite()) {
        return Err(domain(format!("density must be positive and finite, got {rho}")));
    }
    let rho_c = critical_density(params);
    let rho_e = (rho - rho_c).max(0.0);
    let s_offset = 0.5 * hyl.b * params.beta * rho_e * rho_e;
    let c = candidates(params, hyl.b, rho)?;
    let obj = Objective { params, b: hyl.b, rho };
    let zero = CondensateSolution {
        rho_total: rho,
        rho_e,
        rho_s: 0.0,
        rho_bar: rho_e,
        rho_free: c.u_edge,
        s_value: c.edge_value - s_offset,
        branch: Branch::Zero,
        objective_curvature: None,
        coexisting_rho_bar: None,
    };
    let Some((u_star, value)) = c.interior else {
        return Ok(zero);
    };
    let diff = value - c.edge_value;
    let rho_bar = rho - u_star;
    let interior = CondensateSolution {
        rho_s: rho_bar - rho_e,
        rho_bar,
        rho_free: u_star,
        s_value: value - s_offset,
        branch: Branch::Interior,
        objective_curvature: Some(obj.curvature(u_star)?),
        ..zero
    };
    // with R'(edge) > 0 the edge is not a local maximum at all
    let edge_is_local_max = obj.slope(c.u_edge) <= 0.0;
    if !edge_is_local_max {
        return Ok(interior);
    }
    if diff.abs() <= COEXISTENCE_TOL * value.abs().max(1.0) {
        return Ok(CondensateSolution {
            branch: Branch::Coexistence,
            coexisting_rho_bar: Some(rho_e),
            ..interior
        });
    }
    Ok(if diff > 0.0 { interior } else { zero })
}

/// Result of locating the onset of condensation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriticalHyl {
    pub rho_c_hyl: f64,
    /// Condensate density just above `rho_c_hyl`; zero for a continuous onset.
    pub jump_size: f64,
}

/// `ρ_c^HY = sup{ρ_o : ρ̄(ρ_o) = 0}` together with the size of the jump of `ρ̄` there.
pub fn critical_density_hyl(params: &ModelParams, hyl: &HYLParams) -> Result<CriticalHyl> {
    let rho_c = critical_density(params);
    // positive when the interior candidate strictly wins
    let advantage = |rho_o: f64| -> Result<Option<(f64, f64)>> {
        let c = candidates(params, hyl.b, rho_o)?;
        Ok(c.interior.map(|(u, v)| (v - c.edge_value, rho_o - u)))
    };
    let wins = |r: &Option<(f64, f64)>| matches!(r, Some((diff, _)) if *diff > 0.0);
    let top = advantage(rho_c)?;
    if !wins(&top) {
        return Ok(CriticalHyl { rho_c_hyl: rho_c, jump_size: 0.0 });
    }
    let mut lo = 1e-3 * rho_c;
    while wins(&advantage(lo)?) {
        lo *= 0.5;
        if lo < 1e-12 * rho_c {
            return Err(Error::Convergence("condensate present at all densities".into()));
        }
    }
    let mut hi = rho_c;
    let mut hi_state = top;
    while hi - lo > 1e-14 * rho_c {
        let mid = 0.5 * (lo + hi);
        let state = advantage(mid)?;
        if wins(&state) {
            hi = mid;
            hi_state = state;
        } else {
            lo = mid;
        }
    }
    let jump_size = hi_state.map(|(_, y)| y).unwrap_or(0.0);
    Ok(CriticalHyl { rho_c_hyl: 0.5 * (lo + hi), jump_size })
}

/// `b_c = 1/𝛒'(0)`, finite only for `d >= 5`.
pub fn b_critical(params: &ModelParams) -> Result<f64> {
    match density_prime(params, 0.0) {
        Ok(v) => Ok(1.0 / v),
        Err(Error::Divergent(_)) => Err(Error::Divergent(format!(
            "in dimension {} every b > 0 shifts the critical density",
            params.d
        ))),
        Err(e) => Err(e),
    }
}

/// `f^HY(β, ρ) = (ρ−ρ̄)𝛍(ρ−ρ̄) − (P(𝛍(ρ−ρ̄)) − P(0))/β − bρ̄²/2`.
pub fn free_energy(params: &ModelParams, hyl: &HYLParams, rho: f64) -> Result<f64> {
    let sol = solve_rho_bar(params, hyl, rho)?;
    free_energy_from(params, hyl, &sol)
}

fn free_energy_from(params: &ModelParams, hyl: &HYLParams, sol: &CondensateSolution) -> Result<f64> {
    let u = sol.rho_free;
    let m = mu_of_rho(params, u)?;
    Ok(u * m - pressure_shift(params, m)? / params.beta - 0.5 * hyl.b * sol.rho_bar * sol.rho_bar)
}

/// `J(ρ)/β = μρ − aρ²/2 − f^HY(β, ρ)`, the grand-canonical objective.
pub fn grand_canonical_objective(params: &ModelParams, hyl: &HYLParams, mu: f64, rho: f64) -> Result<f64> {
    Ok(mu * rho - 0.5 * hyl.a * rho * rho - free_energy(params, hyl, rho)?)
}

/// `J'(ρ)/β = μ − aρ − 𝛍(ρ − ρ̄(ρ))`, valid off the onset density.
fn gc_slope(params: &ModelParams, hyl: &HYLParams, mu: f64, rho: f64, onset: f64) -> Result<f64> {
    let free = if rho < onset { rho } else { solve_rho_bar(params, hyl, rho)?.rho_free };
    Ok(mu - hyl.a * rho - mu_of_rho(params, free)?)
}

/// Grand-canonical density: the maximiser of `J` over `ρ > 0`.
pub fn rho_gc(params: &ModelParams, hyl: &HYLParams, mu: f64) -> Result<f64> {
    Ok(gc_solution(params, hyl, mu)?.0)
}

/// `(ρ^GC, J(ρ^GC)/β)`.
fn gc_solution(params: &ModelParams, hyl: &HYLParams, mu: f64) -> Result<(f64, f64)> {
    hyl.require_grand_canonical()?;
    if !mu.is_finite() {
        return Err(domain(format!("chemical potential must be finite, got {mu}")));
    }
    let onset = critical_density_hyl(params, hyl)?.rho_c_hyl;
    let p0 = crate::thermo::pressure(params, 0.0)?;
    let gap = hyl.a - hyl.b;
    // J/β <= μρ − (a−b)ρ²/2 and J(0+)/β = −P(0)/β bound the maximiser
    let rho_max = (mu + (mu * mu + 2.0 * gap * p0 / params.beta).sqrt()) / gap;
    let slope = |rho: f64| gc_slope(params, hyl, mu, rho, onset);
    let mut rho_min = 1e-12 * rho_max;
    while slope(rho_min)? <= 0.0 {
        rho_min *= 1e-6;
        if rho_min < 1e-300 {
            return Err(Error::Convergence(format!("no bracket for the density at mu = {mu}")));
        }
    }
    const GRID: usize = 400;
    let ratio = (rho_max / rho_min).powf(1.0 / (GRID as f64 - 1.0));
    let mut grid: Vec<f64> = (0..GRID).map(|i| rho_min * ratio.powi(i as i32)).collect();
    grid[GRID - 1] = rho_max;
    let mut best: Option<(f64, f64)> = None;
    let mut prev = (grid[0], slope(grid[0])?);
    for &r in &grid[1..] {
        let s = slope(r)?;
        // a downward crossing that does not straddle the convex kink
        if prev.1 > 0.0 && s <= 0.0 && !(prev.0 < onset && r >= onset) {
            let root = brent(|x| slope(x).unwrap_or(f64::NAN), prev.0, r, 0.0)?;
            let value = grand_canonical_objective(params, hyl, mu, root)?;
            if best.is_none_or(|(_, v)| value > v) {
                best = Some((root, value));
            }
        } else if prev.1 > 0.0 && s <= 0.0 {
            // crossing the kink: check both sides separately
            for (a, b) in [(prev.0, onset * (1.0 - 1e-15)), (onset * (1.0 + 1e-15), r)] {
                let (sa, sb) = (slope(a)?, slope(b)?);
                if sa > 0.0 && sb <= 0.0 {
                    let root = brent(|x| slope(x).unwrap_or(f64::NAN), a, b, 0.0)?;
                    let value = grand_canonical_objective(params, hyl, mu, root)?;
                    if best.is_none_or(|(_, v)| value > v) {
                        best = Some((root, value));
                    }
                }
            }
        }
        prev = (r, s);
    }
    best.ok_or_else(|| Error::Convergence(format!("no maximiser of J found at mu = {mu}")))
}

/// `P^HY(β, μ) = μρ^GC − a(ρ^GC)²/2 − f^HY(β, ρ^GC)`.
pub fn pressure_hyl(params: &ModelParams, hyl: &HYLParams, mu: f64) -> Result<f64> {
    Ok(gc_solution(params, hyl, mu)?.1)
}

/// A penalty `G` tabulated at increasing abscissae, linearly interpolated
/// between nodes and `+∞` outside the table.
#[derive(Debug, Clone, PartialEq)]
pub struct TabulatedG {
    xs: Vec<f64>,
    values: Vec<f64>,
}

impl TabulatedG {
    pub fn new(xs: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if xs.len() != values.len() || xs.len() < 2 {
            return Err(Error::Config("a tabulated G needs at least two (x, value) rows".into()));
        }
        if xs.windows(2).any(|w| !(w[1] > w[0])) || xs.iter().any(|x| !x.is_finite()) {
            return Err(Error::Config("tabulated x values must be finite and strictly increasing".into()));
        }
        if values.iter().any(|v| v.is_nan() || *v == f64::NEG_INFINITY) {
            return Err(Error::Config("tabulated G values must be real or +inf".into()));
        }
        Ok(Self { xs, values })
    }

    /// Reads `x,value` rows; a non-numeric first row is taken as a header.
    pub fn from_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_reader(reader);
        let (mut xs, mut values) = (Vec::new(), Vec::new());
        for (i, record) in rdr.records().enumerate() {
            let record = record.map_err(|e| Error::Config(format!("malformed G table: {e}")))?;
            if record.len() != 2 {
                return Err(Error::Config(format!("row {} must have two columns", i + 1)));
            }
            let parsed = (record[0].parse::<f64>(), record[1].parse::<f64>());
            match parsed {
                (Ok(x), Ok(v)) => {
                    xs.push(x);
                    values.push(v);
                }
                _ if i == 0 => continue,
                _ => return Err(Error::Config(format!("row {} is not numeric", i + 1))),
            }
        }
        Self::new(xs, values)
    }

    pub fn eval(&self, x: f64) -> f64 {
        let n = self.xs.len();
        if !(x >= self.xs[0] && x <= self.xs[n - 1]) {
            return f64::INFINITY;
        }
        let k = self.xs.partition_point(|&t| t <= x);
        if k == n {
            return self.values[n - 1];
        }
        let (x0, x1) = (self.xs[k - 1], self.xs[k]);
        let (v0, v1) = (self.values[k - 1], self.values[k]);
        if x == x0 {
            return v0;
        }
        if v0.is_infinite() || v1.is_infinite() {
            return f64::INFINITY;
        }
        v0 + (v1 - v0) * (x - x0) / (x1 - x0)
    }

    pub fn x_max(&self) -> f64 {
        self.xs[self.xs.len() - 1]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GmfPhase {
    Subcritical,
    Supercritical,
    AtRc,
}

/// Parameters of the limiting loop soup selected by the minimiser.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GmfLimit {
    /// Chemical potential `𝛍(x_min)` of the free soup.
    pub mu: f64,
    /// Density `x_min − ρ_c` of the interlacement component.
    pub interlacement_density: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GmfSolution {
    pub x_min: f64,
    /// Minimum value of `I + G`.
    pub value: f64,
    pub phase: GmfPhase,
    pub limit: GmfLimit,
    /// Near-minimal grid points extend beyond two cells of `x_min`.
    pub non_unique: bool,
    /// Extent of the near-minimal set on the coarse grid.
    pub near_min_interval: (f64, f64),
    /// Level-set condition on `G` checked on the coarse grid.
    pub level_set_ok: bool,
}

/// Grid settings for [`gmf_solve`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GmfOptions {
    pub mu_ref: f64,
    pub x_max: f64,
    pub grid_points: usize,
    pub refinements: usize,
}

impl GmfOptions {
    pub fn new(x_max: f64) -> Self {
        Self { mu_ref: 0.0, x_max, grid_points: 10_000, refinements: 3 }
    }
}

/// Minimise `I_{μ_ref} + G` on `[0, x_max]`.
pub fn gmf_solve<G: Fn(f64) -> f64>(params: &ModelParams, g: G, opts: &GmfOptions) -> Result<GmfSolution> {
    if !(opts.x_max > 0.0 && opts.x_max.is_finite()) || opts.grid_points < 3 {
        return Err(Error::Config("GMF grid needs x_max > 0 and at least 3 points".into()));
    }
    let f = |x: f64| -> Result<f64> {
        let gx = g(x);
        if gx == f64::INFINITY {
            return Ok(f64::INFINITY);
        }
        Ok(rate_i(params, opts.mu_ref, x)? + gx)
    };
    let n = opts.grid_points;
    let h = opts.x_max / (n as f64 - 1.0);
    let xs: Vec<f64> = (0..n).map(|i| i as f64 * h).collect();
    let values = xs.iter().map(|&x| f(x)).collect::<Result<Vec<_>>>()?;
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if v.is_nan() || *v == f64::NEG_INFINITY {
            return Err(Error::Unbounded(format!("I + G is {v} at x = {}", xs[i])));
        }
        // strict comparison keeps the lowest x on ties
        if *v < values[best] {
            best = i;
        }
    }
    if values[best] == f64::INFINITY {
        return Err(Error::Unbounded("I + G is +inf on the whole grid".into()));
    }
    if best == n - 1 {
        return Err(Error::Unbounded(format!(
            "minimum sits at the right edge x = {}; enlarge the domain",
            opts.x_max
        )));
    }
    let level = values[best];
    let near = |v: f64| v <= level + 1e-9 * level.abs().max(1.0);
    let near_idx: Vec<usize> = (0..n).filter(|&i| near(values[i])).collect();
    let (first, last) = (near_idx[0], *near_idx.last().expect("argmin is near"));
    let non_unique = best - first > 2 || last - best > 2;

    let (mut x_best, mut v_best) = (xs[best], level);
    let mut width = h;
    for _ in 0..opts.refinements {
        let lo = (x_best - width).max(0.0);
        let hi = (x_best + width).min(opts.x_max);
        let step = (hi - lo) / 20.0;
        for k in 0..=20 {
            let x = lo + step * k as f64;
            let v = f(x)?;
            if v < v_best || (v == v_best && x < x_best) {
                x_best = x;
                v_best = v;
            }
        }
        width /= 10.0;
    }
    let lo = (x_best - width).max(0.0);
    let hi = (x_best + width).min(opts.x_max);
    let (x_g, neg_v) = golden_max(|x| -f(x).unwrap_or(f64::INFINITY), lo, hi, 1e-14 * opts.x_max);
    if -neg_v < v_best {
        x_best = x_g;
        v_best = -neg_v;
    }

    let k_value = g(x_best);
    let delta = 1e-8 * k_value.abs().max(1.0);
    let eps = 0.01 * opts.x_max;
    let level_set_ok = xs.iter().all(|&x| {
        let gx = g(x);
        !(gx >= k_value && gx < k_value + delta) || (x - x_best).abs() < eps
    });

    let rho_c = critical_density(params);
    let at_tol = 10.0 * width;
    let (phase, limit) = if (x_best - rho_c).abs() <= at_tol {
        (GmfPhase::AtRc, GmfLimit { mu: 0.0, interlacement_density: 0.0 })
    } else if x_best < rho_c {
        let mu = if x_best > 0.0 { mu_of_rho(params, x_best)? } else { f64::NEG_INFINITY };
        (GmfPhase::Subcritical, GmfLimit { mu, interlacement_density: 0.0 })
    } else {
        (GmfPhase::Supercritical, GmfLimit { mu: 0.0, interlacement_density: x_best - rho_c })
    };
    Ok(GmfSolution {
        x_min: x_best,
        value: v_best,
        phase,
        limit,
        non_unique,
        near_min_interval: (xs[first], xs[last]),
        level_set_ok,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::thermo::density;

    fn p(d: u32) -> ModelParams {
        ModelParams::new(d, 1.0).unwrap()
    }

    #[test]
    fn objective_examples() {
        let params = p(3);
        let hyl = HYLParams::new(0.0, 1.0).unwrap();
        let rc = critical_density(&params);
        assert_eq!(excess_objective(&params, &hyl, 1.3 * rc, 0.0).unwrap(), 0.0);
        let sub = excess_objective(&params, &hyl, 0.7 * rc, 0.0).unwrap();
        assert!((sub + rate_i(&params, 0.0, 0.7 * rc).unwrap()).abs() < 1e-15);
        assert!(sub < 0.0);
        let rho_e = 0.3 * rc;
        let slope = excess_objective_derivative(&params, &hyl, rc + rho_e, 1e-9).unwrap();
        assert!((slope - rho_e).abs() < 1e-6 * rho_e);
        assert!(excess_objective(&params, &hyl, 0.5 * rc, 0.6 * rc).is_err());
        assert!(excess_objective(&params, &hyl, 2.0 * rc, -0.1).is_err());
        // the endpoint x = ρ_c is finite in d = 3
        let end = excess_objective(&params, &hyl, 2.0 * rc, rc).unwrap();
        assert!(end.is_finite());
    }

    #[test]
    fn params_validation() {
        assert!(HYLParams::new(1.0, 0.0).is_err());
        assert!(HYLParams::new(-1.0, 0.5).is_err());
        let hyl = HYLParams::new(1.0, 1.0).unwrap();
        assert!(matches!(rho_gc(&p(3), &hyl, 0.0), Err(Error::Config(_))));
    }

    #[test]
    fn b_critical_values() {
        let b5 = b_critical(&p(5)).unwrap();
        let oracle = (2.0 * std::f64::consts::PI).powf(2.5) / 2.612_375_348_685_488;
        assert!((b5 - oracle).abs() < 1e-10 * oracle);
        assert!(matches!(b_critical(&p(3)), Err(Error::Divergent(_))));
        assert!(matches!(b_critical(&p(4)), Err(Error::Divergent(_))));
    }

    #[test]
    fn subcritical_zero_branch_for_small_b() {
        let params = p(5);
        let b = 0.5 * b_critical(&params).unwrap();
        let hyl = HYLParams::new(0.0, b).unwrap();
        let rc = critical_density(&params);
        let sol = solve_rho_bar(&params, &hyl, 0.9 * rc).unwrap();
        assert_eq!(sol.branch, Branch::Zero);
        assert_eq!(sol.rho_bar, 0.0);
        let crit = critical_density_hyl(&params, &hyl).unwrap();
        assert_eq!(crit.rho_c_hyl, rc);
        assert_eq!(crit.jump_size, 0.0);
    }

    #[test]
    fn supercritical_is_interior_and_stationary() {
        let params = p(3);
        let hyl = HYLParams::new(0.0, 1.0).unwrap();
        let rc = critical_density(&params);
        let sol = solve_rho_bar(&params, &hyl, 1.2 * rc).unwrap();
        assert_eq!(sol.branch, Branch::Interior);
        assert!(sol.rho_s > 0.0 && sol.rho_s < rc);
        assert!(sol.rho_bar < sol.rho_total);
        assert!(sol.objective_curvature.unwrap() < 0.0);
        let stat = hyl.b * sol.rho_bar + mu_of_rho(&params, rc - sol.rho_s).unwrap();
        assert!(stat.abs() < 1e-9);
    }

    #[test]
    fn free_energy_matches_s1() {
        let params = p(3);
        let hyl = HYLParams::new(0.0, 1.0).unwrap();
        let rc = critical_density(&params);
        for rho in [0.5 * rc, 0.95 * rc, 1.5 * rc] {
            let sol = solve_rho_bar(&params, &hyl, rho).unwrap();
            let f = free_energy(&params, &hyl, rho).unwrap();
            let s1 = sol.s1(&params, &hyl);
            assert!((f + s1 / params.beta).abs() < 1e-10 * s1.abs().max(1.0), "rho={rho}");
        }
    }

    #[test]
    fn free_energy_reduces_to_free_gas() {
        let params = p(3);
        let hyl = HYLParams::new(0.0, 1e-9).unwrap();
        let rho = 0.4 * critical_density(&params);
        let f = free_energy(&params, &hyl, rho).unwrap();
        let free = rate_i(&params, 0.0, rho).unwrap() / params.beta;
        assert!((f - free).abs() < 1e-12);
    }

    #[test]
    fn tabulated_g_interpolation() {
        let g = TabulatedG::from_csv("x,value\n0,1\n1,3\n2,inf\n".as_bytes()).unwrap();
        assert_eq!(g.eval(0.5), 2.0);
        assert_eq!(g.eval(1.0), 3.0);
        assert_eq!(g.eval(1.5), f64::INFINITY);
        assert_eq!(g.eval(-0.1), f64::INFINITY);
        assert_eq!(g.eval(2.5), f64::INFINITY);
        assert_eq!(g.x_max(), 2.0);
        assert!(TabulatedG::from_csv("0,1\n0,2\n".as_bytes()).is_err());
        assert!(TabulatedG::from_csv("0,1\nfoo,2\n".as_bytes()).is_err());
    }

    #[test]
    fn gmf_flat_rate_is_not_unique() {
        let params = p(3);
        let rc = critical_density(&params);
        let sol = gmf_solve(
            &params,
            |x| if x <= 3.0 * rc { 0.0 } else { f64::INFINITY },
            &GmfOptions::new(4.0 * rc),
        )
        .unwrap();
        assert!(sol.non_unique);
    }

    #[test]
    fn gmf_unbounded() {
        let params = p(3);
        let rc = critical_density(&params);
        let err = gmf_solve(&params, |x| -10.0 * x, &GmfOptions::new(2.0 * rc)).unwrap_err();
        assert!(matches!(err, Error::Unbounded(_)));
        let err = gmf_solve(&params, |_| f64::NEG_INFINITY, &GmfOptions::new(rc)).unwrap_err();
        assert!(matches!(err, Error::Unbounded(_)));
    }

    #[test]
    fn gmf_quadratic_subcritical() {
        let params = p(3);
        let rc = critical_density(&params);
        let c = 0.3 * rc;
        let k = 50.0;
        let sol = gmf_solve(&params, |x| 0.5 * k * (x - c) * (x - c), &GmfOptions::new(2.0 * rc)).unwrap();
        assert_eq!(sol.phase, GmfPhase::Subcritical);
        // stationarity: G'(x) + β𝛍(x) = 0
        let stat = k * (sol.x_min - c) + params.beta * mu_of_rho(&params, sol.x_min).unwrap();
        assert!(stat.abs() < 1e-6, "{stat}");
        assert!(!sol.non_unique);
        assert!(sol.level_set_ok);
        assert!((density(&params, sol.limit.mu).unwrap() - sol.x_min).abs() < 1e-12);
    }
}
