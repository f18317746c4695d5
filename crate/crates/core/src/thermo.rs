//! Free Bose gas thermodynamics in the loop representation: pressure `P`,
//! density `𝛒`, its inverse `𝛍`, the large-deviation rate function `I_μ`
//! of the particle density and the versions truncated to loops of length
//! at most `q`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::roots::brent;
use crate::special::{bridge_return_weight, lambert_w_m1, polylog_exp, polylog_exp_minus_zeta, zeta};

/// Dimension and inverse temperature of the free gas.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub d: u32,
    pub beta: f64,
}

impl ModelParams {
    pub fn new(d: u32, beta: f64) -> Result<Self> {
        if d < 3 {
            return Err(Error::Config(format!("dimension must be at least 3, got {d}")));
        }
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::Config(format!("beta must be positive and finite, got {beta}")));
        }
        Ok(Self { d, beta })
    }

    /// `c_d = (2π)^{-d/2}`.
    pub fn c_d(&self) -> f64 {
        (2.0 * PI).powf(-self.half_d())
    }

    pub(crate) fn half_d(&self) -> f64 {
        0.5 * f64::from(self.d)
    }
}

/// Pressure, density and (where finite) density derivative at one `μ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThermoPoint {
    pub mu: f64,
    pub pressure: f64,
    pub density: f64,
    pub density_prime: Option<f64>,
}

pub fn thermo_point(params: &ModelParams, mu: f64) -> Result<ThermoPoint> {
    let density_prime = match density_prime(params, mu) {
        Ok(v) => Some(v),
        Err(Error::Divergent(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(ThermoPoint { mu, pressure: pressure(params, mu)?, density: density(params, mu)?, density_prime })
}

fn check_mu(mu: f64) -> Result<()> {
    if mu.is_nan() || mu > 0.0 {
        Err(domain(format!("chemical potential must be <= 0 on the free branch, got {mu}")))
    } else {
        Ok(())
    }
}

/// `P(μ) = c_d β^{-d/2} Li_{d/2+1}(e^{βμ})`.
pub fn pressure(params: &ModelParams, mu: f64) -> Result<f64> {
    check_mu(mu)?;
    let s = params.half_d() + 1.0;
    Ok(params.c_d() * params.beta.powf(-params.half_d()) * polylog_exp(s, params.beta * mu)?)
}

/// `P(μ) - P(0)`, accurate also when `μ` is close to zero.
pub fn pressure_shift(params: &ModelParams, mu: f64) -> Result<f64> {
    check_mu(mu)?;
    let s = params.half_d() + 1.0;
    Ok(params.c_d() * params.beta.powf(-params.half_d()) * polylog_exp_minus_zeta(s, params.beta * mu)?)
}

/// `𝛒(μ) = (2πβ)^{-d/2} Li_{d/2}(e^{βμ})`.
pub fn density(params: &ModelParams, mu: f64) -> Result<f64> {
    check_mu(mu)?;
    Ok(density_scale(params) * polylog_exp(params.half_d(), params.beta * mu)?)
}

/// `𝛒(μ) - ρ_c`, accurate also when `μ` is close to zero.
pub fn density_shift(params: &ModelParams, mu: f64) -> Result<f64> {
    check_mu(mu)?;
    Ok(density_scale(params) * polylog_exp_minus_zeta(params.half_d(), params.beta * mu)?)
}

fn density_scale(params: &ModelParams) -> f64 {
    (2.0 * PI * params.beta).powf(-params.half_d())
}

/// `ρ_c = (2πβ)^{-d/2} ζ(d/2)`.
pub fn critical_density(params: &ModelParams) -> f64 {
    density_scale(params) * zeta(params.half_d()).expect("d >= 3 gives an order above 1")
}

/// `𝛒'(μ) = c_d β^{1-d/2} Li_{d/2-1}(e^{βμ})`; infinite at `μ = 0` for `d = 3, 4`.
pub fn density_prime(params: &ModelParams, mu: f64) -> Result<f64> {
    check_mu(mu)?;
    let s = params.half_d() - 1.0;
    let scale = params.c_d() * params.beta.powf(1.0 - params.half_d());
    if mu == 0.0 && s <= 1.0 {
        return Err(Error::Divergent(format!(
            "the density derivative at mu = 0 is infinite in dimension {}",
            params.d
        )));
    }
    Ok(scale * polylog_exp(s, params.beta * mu)?)
}

/// Inverse of the density, extended by `0` above `ρ_c`.
pub fn mu_of_rho(params: &ModelParams, rho: f64) -> Result<f64> {
    if rho.is_nan() || rho <= 0.0 {
        return Err(domain(format!("density must be positive, got {rho}")));
    }
    let rho_c = critical_density(params);
    if rho >= rho_c {
        return Ok(0.0);
    }
    let gap = rho - rho_c;
    let g = |mu: f64| density_shift(params, mu).unwrap_or(f64::NAN) - gap;
    let mut lo = -1.0;
    while g(lo) > 0.0 {
        lo *= 2.0;
        if lo < -1e300 {
            return Err(Error::Convergence(format!("no bracket for density {rho}")));
        }
    }
    let mu = brent(g, lo, 0.0, 0.0)?;
    let residual = (density(params, mu)? - rho).abs();
    if residual > 1e-12 * rho_c {
        return Err(Error::Convergence(format!("density inversion residual {residual:e} at rho = {rho}")));
    }
    Ok(mu)
}

/// Rate function `I_μ(x)` of the free-gas particle density.
pub fn rate_i(params: &ModelParams, mu_ref: f64, x: f64) -> Result<f64> {
    check_mu(mu_ref)?;
    if x.is_nan() {
        return Err(domain("rate function evaluated at NaN"));
    }
    if x < 0.0 {
        return Ok(f64::INFINITY);
    }
    if x == 0.0 {
        return pressure(params, mu_ref);
    }
    let beta = params.beta;
    let shift_ref = pressure_shift(params, mu_ref)?;
    if x >= critical_density(params) {
        return Ok(-x * beta * mu_ref + shift_ref);
    }
    let m = mu_of_rho(params, x)?;
    Ok(beta * x * (m - mu_ref) - pressure_shift(params, m)? + shift_ref)
}

fn check_open_interval(params: &ModelParams, x: f64) -> Result<()> {
    if x > 0.0 && x < critical_density(params) {
        Ok(())
    } else {
        Err(domain(format!("derivative needs 0 < x < rho_c, got {x}")))
    }
}

/// `I_μ'(x) = β(𝛍(x) - μ)` on `(0, ρ_c)`.
pub fn rate_i_prime(params: &ModelParams, mu_ref: f64, x: f64) -> Result<f64> {
    check_mu(mu_ref)?;
    check_open_interval(params, x)?;
    Ok(params.beta * (mu_of_rho(params, x)? - mu_ref))
}

/// `I''(x) = β / 𝛒'(𝛍(x))` on `(0, ρ_c)`; independent of the reference `μ`.
pub fn rate_i_second(params: &ModelParams, x: f64) -> Result<f64> {
    check_open_interval(params, x)?;
    let m = mu_of_rho(params, x)?;
    Ok(params.beta / density_prime(params, m)?)
}

/// Gnedenko central-limit scale of the free particle number in volume `V`.
pub fn a_scale(params: &ModelParams, volume: f64) -> f64 {
    match params.d {
        3 => volume.powf(2.0 / 3.0),
        4 => (volume * volume.ln()).sqrt(),
        _ => volume.sqrt(),
    }
}

fn check_q(q: u64) -> Result<()> {
    if q == 0 {
        Err(domain("truncation length q must be at least 1"))
    } else {
        Ok(())
    }
}

/// `Σ_{j≤q} e^{βμj} p_{βj}(0) j^{-power}`, stopping early once the
/// remaining terms are negligible.
fn truncated_sum(params: &ModelParams, q: u64, mu: f64, power: f64) -> f64 {
    let z = (params.beta * mu).exp();
    let mut sum = 0.0;
    let mut zj = 1.0;
    for j in 1..=q {
        zj *= z;
        let term = zj * bridge_return_weight(params.d, params.beta, j) / (j as f64).powf(power);
        sum += term;
        if z < 1.0 && term * z / (1.0 - z) <= 1e-17 * sum {
            break;
        }
    }
    sum
}

/// `P^q(μ) = Σ_{j≤q} e^{βμj} p_{βj}(0) / j`.
pub fn pressure_q(params: &ModelParams, q: u64, mu: f64) -> Result<f64> {
    check_q(q)?;
    check_mu(mu)?;
    Ok(truncated_sum(params, q, mu, 1.0))
}

/// `𝛒^q(μ) = Σ_{j≤q} e^{βμj} p_{βj}(0)`.
pub fn density_q(params: &ModelParams, q: u64, mu: f64) -> Result<f64> {
    check_q(q)?;
    check_mu(mu)?;
    Ok(truncated_sum(params, q, mu, 0.0))
}

/// Inverse of `𝛒^q` restricted to `μ <= 0`, i.e. to `rho < 𝛒^q(0)`.
pub fn mu_of_rho_q(params: &ModelParams, q: u64, rho: f64) -> Result<f64> {
    check_q(q)?;
    if rho.is_nan() || rho <= 0.0 {
        return Err(domain(format!("density must be positive, got {rho}")));
    }
    let top = density_q(params, q, 0.0)?;
    if rho >= top {
        return Err(Error::Range(format!("density {rho} is not below the truncated maximum {top}")));
    }
    let g = |mu: f64| truncated_sum(params, q, mu, 0.0) - rho;
    let mut lo = -1.0;
    while g(lo) > 0.0 {
        lo *= 2.0;
        if lo < -1e300 {
            return Err(Error::Convergence(format!("no bracket for density {rho}")));
        }
    }
    brent(g, lo, 0.0, 0.0)
}

/// Truncated rate function `I^q_μ(x)` for `x < 𝛒^q(0)`.
pub fn rate_i_q(params: &ModelParams, q: u64, mu_ref: f64, x: f64) -> Result<f64> {
    check_q(q)?;
    check_mu(mu_ref)?;
    if x.is_nan() {
        return Err(domain("rate function evaluated at NaN"));
    }
    if x < 0.0 {
        return Ok(f64::INFINITY);
    }
    let p_ref = pressure_q(params, q, mu_ref)?;
    if x == 0.0 {
        return Ok(p_ref);
    }
    let m = mu_of_rho_q(params, q, x)?;
    Ok(params.beta * x * (m - mu_ref) - pressure_q(params, q, m)? + p_ref)
}

/// Which near-critical expansion to compare against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AsymptoticKind {
    /// `𝛒(-h) - ρ_c` as `h ↓ 0`.
    DensityNear0,
    /// `𝛍(ρ_c - h)` as `h ↓ 0`.
    MuNearRc,
    /// `I_0(ρ_c - h)` as `h ↓ 0`.
    RateNearRc,
}

/// Exact value against two leading-order forms.
///
/// `asymptotic` is the form as commonly quoted; `rederived` is the leading
/// term obtained from the logarithmic expansion of the polylogarithm. The
/// two coincide for `d >= 5` and for `𝛍` in `d = 3`; elsewhere they differ
/// by constant factors, a sign, or the scaling of the Lambert argument.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticComparison {
    pub kind: AsymptoticKind,
    pub h: f64,
    pub exact: f64,
    pub asymptotic: f64,
    pub ratio: f64,
    pub rederived: f64,
    pub rederived_ratio: f64,
}

pub fn asymptotics_validator(
    params: &ModelParams,
    kind: AsymptoticKind,
    h: f64,
) -> Result<AsymptoticComparison> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(domain(format!("step h must be positive, got {h}")));
    }
    let beta = params.beta;
    let c4 = params.c_d();
    let d = params.d;
    let (exact, asymptotic, rederived) = match kind {
        AsymptoticKind::DensityNear0 => {
            let exact = density_shift(params, -h)?;
            match d {
                3 => (exact, -(2.0 * h).sqrt() / (PI * beta), -(2.0 * h).sqrt() / (2.0 * PI * beta)),
                4 => (exact, -c4 * h / beta * (1.0 / h).ln(), -c4 * h / beta * (1.0 / (beta * h)).ln()),
                _ => {
                    let v = -h * density_prime(params, 0.0)?;
                    (exact, v, v)
                }
            }
        }
        AsymptoticKind::MuNearRc | AsymptoticKind::RateNearRc => {
            let rho_c = critical_density(params);
            if h >= rho_c {
                return Err(domain(format!("h = {h} must be below rho_c = {rho_c}")));
            }
            let x = rho_c - h;
            if kind == AsymptoticKind::MuNearRc {
                let exact = mu_of_rho(params, x)?;
                match d {
                    3 => {
                        let v = -2.0 * beta * beta * PI * PI * h * h;
                        (exact, v, v)
                    }
                    4 => (
                        exact,
                        -h * beta / (c4 * lambert_w_m1(-h * beta / c4)?),
                        h * beta / (c4 * lambert_w_m1(-h * beta * beta / c4)?),
                    ),
                    _ => {
                        let v = -h / density_prime(params, 0.0)?;
                        (exact, v, v)
                    }
                }
            } else {
                let exact = rate_i(params, 0.0, x)?;
                match d {
                    3 => (
                        exact,
                        4.0 * h.powi(3) * beta.powi(3) * PI * PI,
                        2.0 * PI * PI * beta.powi(3) * h.powi(3) / 3.0,
                    ),
                    4 => (
                        exact,
                        -2.0 * h * h * beta * beta / (c4 * lambert_w_m1(-h * beta / c4)?),
                        -h * h * beta * beta / (2.0 * c4 * lambert_w_m1(-h * beta * beta / c4)?),
                    ),
                    _ => {
                        let v = h * h * beta / (2.0 * density_prime(params, 0.0)?);
                        (exact, v, v)
                    }
                }
            }
        }
    };
    Ok(AsymptoticComparison {
        kind,
        h,
        exact,
        asymptotic,
        ratio: exact / asymptotic,
        rederived,
        rederived_ratio: exact / rederived,
    })
}
