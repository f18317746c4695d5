//! Rate function of the loop-length densities under the full HYL
//! Hamiltonian (counter-term acting on loops of every length) and the
//! resulting strict pressure gap to the partial model.
//!
//! With `D(x) = Σ j x_j` the rate function reads
//!
//! ```text
//! 𝓘(x) = Σ x_j (log(j x_j / p_j) − 1) − μβD + (aβ/2)D² − (bβ/2)Σ j² x_j²
//!        − β/(2(a−b)) (μ − aD)₊² − P(0) + p̃
//! ```
//!
//! Its stationary points have the form `x_j = −W_0(−κ_j m_j) / κ_j` with
//! `κ_j = bβj²`, `m_j = (p_j / j) e^{jβη}` and a scalar `η(D)`, so the
//! minimiser is found by a scalar fixed-point search in `D`, cross-checked
//! by coordinate descent from several starting points and polished by
//! Newton steps.

use serde::{Deserialize, Serialize};

use crate::condensate::HYLParams;
use crate::error::{domain, Error, Result};
use crate::roots::{brent, golden_max};
use crate::special::{bridge_return_weight, lambert_w0};
use crate::thermo::{pressure, ModelParams};

/// Densities `x_1, …, x_jmax` of loops of each length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleDensityVector {
    pub x: Vec<f64>,
}

impl CycleDensityVector {
    pub fn new(x: Vec<f64>) -> Result<Self> {
        if x.is_empty() {
            return Err(domain("a cycle density vector needs at least one entry"));
        }
        if let Some(v) = x.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(domain(format!("cycle densities must be finite and non-negative, got {v}")));
        }
        Ok(Self { x })
    }

    pub fn jmax(&self) -> usize {
        self.x.len()
    }

    /// Particle density `D(x) = Σ j x_j`.
    pub fn particle_density(&self) -> f64 {
        particle_density(&self.x)
    }
}

fn particle_density(x: &[f64]) -> f64 {
    x.iter().enumerate().map(|(i, v)| (i + 1) as f64 * v).sum()
}

/// Parameters shared by every evaluation of `𝓘`.
struct Model {
    beta: f64,
    a: f64,
    b: f64,
    mu: f64,
    p0: f64,
    /// `p_{βj}(0)` for `j = 1..=jmax`.
    weights: Vec<f64>,
    /// Diagonal weights `w_j` of an added `Σ w_j x_j² / 2`.
    addon: Vec<f64>,
}

impl Model {
    fn new(params: &ModelParams, hyl: &HYLParams, mu: f64, jmax: usize, addon: &[f64]) -> Result<Self> {
        if !(hyl.a > hyl.b) {
            return Err(domain(format!(
                "the full HYL rate function needs a > b, got a = {}, b = {}",
                hyl.a, hyl.b
            )));
        }
        if !mu.is_finite() {
            return Err(domain(format!("chemical potential must be finite, got {mu}")));
        }
        let weights = (1..=jmax as u64).map(|j| bridge_return_weight(params.d, params.beta, j)).collect();
        let mut w = vec![0.0; jmax];
        for (slot, v) in w.iter_mut().zip(addon) {
            *slot = *v;
        }
        Ok(Self { beta: params.beta, a: hyl.a, b: hyl.b, mu, p0: pressure(params, 0.0)?, weights, addon: w })
    }

    fn jmax(&self) -> usize {
        self.weights.len()
    }

    /// `κ_j = bβj² − w_j`, the net quadratic coefficient of `x_j`.
    fn kappa(&self, j: usize) -> f64 {
        let jf = j as f64;
        self.b * self.beta * jf * jf - self.addon[j - 1]
    }

    /// Terms depending on `x` only through `D`.
    fn h(&self, d: f64) -> f64 {
        let pos = (self.mu - self.a * d).max(0.0);
        -self.mu * self.beta * d + 0.5 * self.a * self.beta * d * d
            - self.beta * pos * pos / (2.0 * (self.a - self.b))
    }

    /// `η(D)`, with gradient contribution `−jβη` for coordinate `j`.
    fn eta(&self, d: f64) -> f64 {
        let s = self.mu - self.a * d;
        if s <= 0.0 {
            s
        } else {
            -self.b * s / (self.a - self.b)
        }
    }

    /// Coefficient `c` of the rank-one Hessian part `c · j k`.
    fn coupling(&self, d: f64) -> f64 {
        if self.a * d >= self.mu {
            self.a * self.beta
        } else {
            -self.a * self.b * self.beta / (self.a - self.b)
        }
    }

    fn entropy_term(&self, j: usize, v: f64) -> f64 {
        if v == 0.0 {
            0.0
        } else {
            v * ((j as f64 * v / self.weights[j - 1]).ln() - 1.0)
        }
    }

    /// `𝓘(x) + Σ w_j x_j²/2` with `p̃ = 0`.
    fn value(&self, x: &[f64]) -> f64 {
        let d = particle_density(x);
        if !d.is_finite() {
            return f64::INFINITY;
        }
        let mut sum = 0.0;
        for (i, &v) in x.iter().enumerate() {
            let j = i + 1;
            sum += self.entropy_term(j, v) - 0.5 * self.kappa(j) * v * v;
        }
        sum + self.h(d) - self.p0
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let d = particle_density(x);
        let eta = self.eta(d);
        x.iter()
            .enumerate()
            .map(|(i, &v)| {
                let j = i + 1;
                let jf = j as f64;
                (jf * v / self.weights[i]).ln() - self.kappa(j) * v - jf * self.beta * eta
            })
            .collect()
    }

    /// Stationary `x_j` for a given `η`, if the `W_0` branch exists for every `j`.
    fn profile(&self, eta: f64) -> Option<Vec<f64>> {
        let mut x = Vec::with_capacity(self.jmax());
        for j in 1..=self.jmax() {
            let jf = j as f64;
            let m = self.weights[j - 1] / jf * (jf * self.beta * eta).exp();
            let k = self.kappa(j);
            if k == 0.0 || m == 0.0 {
                x.push(m);
                continue;
            }
            let arg = -k * m;
            if arg < -std::f64::consts::E.recip() {
                return None;
            }
            let w = lambert_w0(arg).ok()?;
            x.push(-w / k);
        }
        Some(x)
    }

    /// Minimise the slice in coordinate `j` with all other coordinates fixed.
    fn slice_minimise(&self, x: &mut [f64], j: usize, d_total: &mut f64) {
        let jf = j as f64;
        let d_rest = *d_total - jf * x[j - 1];
        let k = self.kappa(j);
        let p = self.weights[j - 1];
        let slope = |y: f64| -> f64 {
            if y <= 0.0 {
                return f64::NEG_INFINITY;
            }
            (jf * y / p).ln() - k * y - jf * self.beta * self.eta(d_rest + jf * y)
        };
        let value = |y: f64| -> f64 { self.entropy_term(j, y) - 0.5 * k * y * y + self.h(d_rest + jf * y) };
        let mut candidates = Vec::with_capacity(2);
        let split = ((self.mu / self.a - d_rest) / jf).max(0.0);
        if split > 0.0 {
            // slope is concave on (0, split)
            let (y_peak, s_peak) = golden_max(slope, 0.0, split, 1e-14 * split);
            if s_peak > 0.0 {
                let mut lo = 0.5 * y_peak;
                while slope(lo) >= 0.0 && lo > 1e-300 {
                    lo *= 0.5;
                }
                if let Ok(r) = brent(slope, lo, y_peak, 0.0) {
                    candidates.push(r);
                }
            }
        }
        let start = if split > 0.0 { split } else { x[j - 1].max(1e-300) };
        let s0 = slope(start);
        if s0 < 0.0 || split == 0.0 {
            let (mut lo, mut hi) = (start, start);
            if split == 0.0 {
                while slope(lo) > 0.0 && lo > 1e-300 {
                    lo *= 0.5;
                }
            }
            hi = hi.max(1e-300);
            while slope(hi) < 0.0 {
                hi *= 2.0;
            }
            if let Ok(r) = brent(slope, lo, hi, 0.0) {
                candidates.push(r);
            }
        }
        if let Some(best) = candidates.into_iter().min_by(|a, b| value(*a).total_cmp(&value(*b))) {
            if value(best) <= value(x[j - 1]) {
                x[j - 1] = best;
                *d_total = d_rest + jf * best;
            }
        }
    }

    /// One damped Newton step using the diagonal-plus-rank-one Hessian.
    fn newton_step(&self, x: &mut [f64]) {
        let g = self.gradient(x);
        let d = particle_density(x);
        let c = self.coupling(d);
        let diag: Vec<f64> = x.iter().enumerate().map(|(i, &v)| 1.0 / v - self.kappa(i + 1)).collect();
        if diag.iter().any(|v| *v <= 0.0) {
            return;
        }
        let mut ug = 0.0;
        let mut uu = 0.0;
        for (i, (&gi, &di)) in g.iter().zip(&diag).enumerate() {
            let u = (i + 1) as f64;
            ug += u * gi / di;
            uu += u * u / di;
        }
        let factor = c * ug / (1.0 + c * uu);
        let step: Vec<f64> = g
            .iter()
            .zip(&diag)
            .enumerate()
            .map(|(i, (&gi, &di))| (-gi + factor * (i + 1) as f64) / di)
            .collect();
        let f0 = self.value(x);
        let mut t = 1.0;
        for _ in 0..40 {
            let trial: Vec<f64> = x.iter().zip(&step).map(|(v, s)| v + t * s).collect();
            if trial.iter().all(|v| *v > 0.0) && self.value(&trial) <= f0 {
                x.copy_from_slice(&trial);
                return;
            }
            t *= 0.5;
        }
    }

    fn grad_norm(&self, x: &[f64]) -> f64 {
        self.gradient(x).iter().fold(0.0, |m, g| m.max(g.abs()))
    }
}

/// `𝓘(x)` with additive constant `p_tilde`.
pub fn full_rate(
    params: &ModelParams,
    hyl: &HYLParams,
    mu: f64,
    x: &CycleDensityVector,
    p_tilde: f64,
) -> Result<f64> {
    let model = Model::new(params, hyl, mu, x.jmax(), &[])?;
    Ok(model.value(&x.x) + p_tilde)
}

/// Partial derivatives of `𝓘`; `−∞` in coordinates where `x_j = 0`.
pub fn full_rate_gradient(
    params: &ModelParams,
    hyl: &HYLParams,
    mu: f64,
    x: &CycleDensityVector,
) -> Result<Vec<f64>> {
    let model = Model::new(params, hyl, mu, x.jmax(), &[])?;
    Ok(model.gradient(&x.x))
}

/// Coercivity constants `(C₁, C₂)` with `𝓘(x) ≥ C₁ + C₂ D(x)²`.
pub fn coercivity_constants(
    params: &ModelParams,
    hyl: &HYLParams,
    mu: f64,
    p_tilde: f64,
) -> Result<(f64, f64)> {
    let gap = hyl.a - hyl.b;
    if !(gap > 0.0) {
        return Err(domain("coercivity needs a > b"));
    }
    let beta = params.beta;
    let p0 = pressure(params, 0.0)?;
    let pos = mu.max(0.0);
    let c1 = -2.0 * p0 - mu * mu * beta / gap - beta * pos * pos / (2.0 * gap) + p_tilde;
    Ok((c1, gap * beta / 4.0))
}

/// Outcome of [`minimize_full_rate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FullRateMinimum {
    pub x_star: CycleDensityVector,
    /// Minimum of `𝓘 + addon` (with the supplied `p_tilde`).
    pub value: f64,
    /// `max_j |∂_j(𝓘 + addon)|` at `x_star`.
    pub gradient_norm: f64,
    /// Number of distinct stationary candidates compared.
    pub candidates: usize,
}

/// Gradient certificate demanded of a reported minimiser.
pub const GRADIENT_TOL: f64 = 1e-8;

/// Minimise `𝓘(x) + Σ_j addon_j x_j² / 2` over `x ∈ [0, ∞)^jmax`.
///
/// `addon` holds diagonal weights (missing entries are zero); `[bβ]`
/// gives the first-loop penalty `bβx₁²/2`.
pub fn minimize_full_rate(
    params: &ModelParams,
    hyl: &HYLParams,
    mu: f64,
    jmax: usize,
    addon: &[f64],
    p_tilde: f64,
) -> Result<FullRateMinimum> {
    if jmax < 50 {
        return Err(domain(format!("jmax must be at least 50, got {jmax}")));
    }
    let model = Model::new(params, hyl, mu, jmax, addon)?;
    let mut candidates: Vec<Vec<f64>> = Vec::new();

    // scalar fixed point D = Σ j x_j(η(D))
    let free_start: Vec<f64> = (1..=jmax)
        .map(|j| model.weights[j - 1] / j as f64 * (params.beta * mu.min(0.0) * j as f64).exp())
        .collect();
    let (c1, c2) = coercivity_constants(params, hyl, mu, 0.0)?;
    let d_hi = ((model.value(&free_start) - c1) / c2).max(0.0).sqrt() + 1.0;
    let phi = |d: f64| -> f64 {
        match model.profile(model.eta(d)) {
            Some(x) => particle_density(&x) - d,
            None => f64::NAN,
        }
    };
    const SCAN: usize = 2000;
    let mut prev = (0.0, phi(0.0));
    for i in 1..=SCAN {
        let d = d_hi * i as f64 / SCAN as f64;
        let f = phi(d);
        if prev.1.is_finite() && f.is_finite() && (prev.1 > 0.0) != (f > 0.0) {
            if let Ok(root) = brent(phi, prev.0, d, 0.0) {
                if let Some(x) = model.profile(model.eta(root)) {
                    candidates.push(x);
                }
            }
        }
        prev = (d, f);
    }

    // coordinate descent from several starts
    for scale in [1.0, 0.1, 10.0] {
        let mut x: Vec<f64> = free_start.iter().map(|v| v * scale).collect();
        let mut d = particle_density(&x);
        for _ in 0..500 {
            for j in 1..=jmax {
                model.slice_minimise(&mut x, j, &mut d);
            }
            if model.grad_norm(&x) <= 0.1 * GRADIENT_TOL {
                break;
            }
        }
        candidates.push(x);
    }

    let count = candidates.len();
    let mut best: Option<(Vec<f64>, f64, f64)> = None;
    for mut x in candidates {
        for _ in 0..8 {
            if model.grad_norm(&x) <= 1e-3 * GRADIENT_TOL {
                break;
            }
            model.newton_step(&mut x);
        }
        let v = model.value(&x);
        let g = model.grad_norm(&x);
        if !v.is_finite() || g > GRADIENT_TOL {
            continue;
        }
        if best.as_ref().is_none_or(|(_, bv, _)| v < *bv) {
            best = Some((x, v, g));
        }
    }
    let (x, v, g) = best.ok_or_else(|| {
        Error::Convergence(format!(
            "no candidate reached the gradient certificate {GRADIENT_TOL:e} (mu = {mu}, jmax = {jmax})"
        ))
    })?;
    Ok(FullRateMinimum {
        x_star: CycleDensityVector { x },
        value: v + p_tilde,
        gradient_norm: g,
        candidates: count,
    })
}

/// Upper-bound witness for `P^HY − P̃^HY`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PressureGap {
    /// `−(1/β) inf{𝓘 + bβx₁²/2}` with `p̃` normalising `min 𝓘 = 0`.
    pub gap: f64,
    /// The normalising constant `p̃`.
    pub p_tilde: f64,
    /// `x₁` at the minimiser of `𝓘` alone.
    pub x1_star: f64,
    /// `−(b/2)(x₁*)²`, a lower bound for `gap`.
    pub lower_bound: f64,
    pub jmax: usize,
}

/// Pressure-gap witness at a fixed truncation length.
pub fn pressure_gap(params: &ModelParams, hyl: &HYLParams, mu: f64, jmax: usize) -> Result<PressureGap> {
    let plain = minimize_full_rate(params, hyl, mu, jmax, &[], 0.0)?;
    let p_tilde = -plain.value;
    let penal = minimize_full_rate(params, hyl, mu, jmax, &[hyl.b * params.beta], p_tilde)?;
    let x1 = plain.x_star.x[0];
    Ok(PressureGap {
        gap: -penal.value / params.beta,
        p_tilde,
        x1_star: x1,
        lower_bound: -0.5 * hyl.b * x1 * x1,
        jmax,
    })
}

/// Pressure-gap witness with `jmax` doubled from 500 until successive
/// values agree to `tol`.
pub fn pressure_gap_auto(params: &ModelParams, hyl: &HYLParams, mu: f64, tol: f64) -> Result<PressureGap> {
    let mut jmax = 500;
    let mut last = pressure_gap(params, hyl, mu, jmax)?;
    for _ in 0..6 {
        jmax *= 2;
        let next = pressure_gap(params, hyl, mu, jmax)?;
        if (next.gap - last.gap).abs() <= tol {
            return Ok(next);
        }
        last = next;
    }
    Err(Error::Convergence(format!("pressure gap not stable to {tol:e} up to jmax = {jmax}")))
}
