//! Special functions: the polylogarithm family, the Riemann zeta function,
//! both real branches of the Lambert W function and the Brownian-bridge
//! return weight.
//!
//! The polylogarithm is summed directly for small arguments. Closer to the
//! unit circle it switches to the expansion of `Li_s(e^δ)` in powers of
//! `δ = ln z`, whose coefficients `ζ(s - k) / k!` are cached per order `s`.
//! Callers that already hold `δ` (the thermodynamic functions do, as `βμ`)
//! should use [`polylog_exp`] so that `δ` never round-trips through `e^δ`.

use std::cell::RefCell;
use std::collections::HashMap;
use std::f64::consts::{E, PI};
use std::sync::OnceLock;

use crate::error::{domain, Error, Result};

/// Accuracy contract for the series-based special functions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrecisionPolicy {
    /// Relative tolerance, `0 < rel_tol <= 1e-6`.
    pub rel_tol: f64,
    /// Hard cap on the number of series terms.
    pub max_terms: u64,
}

impl PrecisionPolicy {
    pub fn new(rel_tol: f64, max_terms: u64) -> Result<Self> {
        if !(rel_tol > 0.0 && rel_tol <= 1e-6) {
            return Err(Error::Config(format!("rel_tol must lie in (0, 1e-6], got {rel_tol}")));
        }
        if max_terms < 1_000 {
            return Err(Error::Config(format!("max_terms must be at least 1000, got {max_terms}")));
        }
        Ok(Self { rel_tol, max_terms })
    }
}

impl Default for PrecisionPolicy {
    fn default() -> Self {
        Self { rel_tol: 1e-12, max_terms: 10_000_000 }
    }
}

/// Above this argument the polylogarithm uses the logarithmic expansion.
const SERIES_CUTOFF: f64 = 0.5;

/// Number of retained terms in the logarithmic expansion. The coefficients
/// decay like `(2π)^-k`, so at `|δ| <= ln 2` forty terms are far below
/// double precision.
const EXPANSION_TERMS: usize = 40;

/// `Li_s(z) = Σ_{j≥1} z^j / j^s` for real `s > 0` and `z ∈ [0, 1]`.
pub fn polylog(s: f64, z: f64) -> Result<f64> {
    polylog_with(s, z, &PrecisionPolicy::default())
}

pub fn polylog_with(s: f64, z: f64, policy: &PrecisionPolicy) -> Result<f64> {
    check_order(s)?;
    if !(0.0..=1.0).contains(&z) {
        return Err(domain(format!("polylog argument must lie in [0, 1], got {z}")));
    }
    if z == 0.0 {
        return Ok(0.0);
    }
    if z == 1.0 {
        return if s > 1.0 {
            Ok(zeta_real(s))
        } else {
            Err(domain(format!("Li_{s}(1) diverges for order <= 1")))
        };
    }
    if z <= SERIES_CUTOFF {
        direct_series(s, z, policy)
    } else {
        Ok(log_expansion(s, (z - 1.0).ln_1p()))
    }
}

/// `Li_s(e^δ)` for `δ <= 0`.
pub fn polylog_exp(s: f64, delta: f64) -> Result<f64> {
    check_order(s)?;
    if delta.is_nan() || delta > 0.0 {
        return Err(domain(format!("polylog_exp needs delta <= 0, got {delta}")));
    }
    if delta == 0.0 {
        return if s > 1.0 {
            Ok(zeta_real(s))
        } else {
            Err(Error::Divergent(format!("Li_{s}(1) diverges for order <= 1")))
        };
    }
    if delta == f64::NEG_INFINITY {
        return Ok(0.0);
    }
    if delta < SERIES_CUTOFF.ln() {
        direct_series(s, delta.exp(), &PrecisionPolicy::default())
    } else {
        Ok(log_expansion(s, delta))
    }
}

/// `Li_s(e^δ) - ζ(s)` for `δ <= 0` and `s > 1`, without the cancellation
/// that subtracting the two values would suffer near `δ = 0`.
pub fn polylog_exp_minus_zeta(s: f64, delta: f64) -> Result<f64> {
    check_order(s)?;
    if s <= 1.0 {
        return Err(domain(format!("ζ({s}) is infinite")));
    }
    if delta.is_nan() || delta > 0.0 {
        return Err(domain(format!("need delta <= 0, got {delta}")));
    }
    if delta == 0.0 {
        return Ok(0.0);
    }
    if delta < SERIES_CUTOFF.ln() {
        return Ok(polylog_exp(s, delta)? - zeta_real(s));
    }
    with_expansion(s, |c| Ok(c.eval(delta, true)))
}

fn check_order(s: f64) -> Result<()> {
    if s.is_finite() && s > 0.0 {
        Ok(())
    } else {
        Err(domain(format!("polylog order must be a positive real, got {s}")))
    }
}

fn direct_series(s: f64, z: f64, policy: &PrecisionPolicy) -> Result<f64> {
    let target = (policy.rel_tol * 1e-4).max(f64::EPSILON * 0.25);
    let tail_factor = z / (1.0 - z);
    let mut sum = 0.0;
    let mut zj = 1.0;
    for j in 1..=policy.max_terms {
        zj *= z;
        let term = zj / (j as f64).powf(s);
        sum += term;
        // j^-s is decreasing, so the remaining tail is below term·z/(1-z).
        if term * tail_factor <= target * sum {
            return Ok(sum);
        }
    }
    Err(Error::Convergence(format!("Li_{s}({z}) not converged after {} terms", policy.max_terms)))
}

/// Cached coefficients of the expansion of `Li_s(e^δ)` around `δ = 0`.
struct LogExpansion {
    /// `Some(n)` for integer order `n`, where the singular part is logarithmic.
    integer: Option<u32>,
    /// `Γ(1 - s)` (non-integer) or `1 / (n-1)!` (integer).
    singular: f64,
    /// Harmonic number `H_{n-1}` (integer orders only).
    harmonic: f64,
    /// `ζ(s - k) / k!`; the `k = n - 1` slot is zero for integer orders.
    coeffs: Vec<f64>,
}

impl LogExpansion {
    fn new(s: f64) -> Self {
        let integer = (s.fract() == 0.0).then_some(s as u32);
        let mut coeffs = Vec::with_capacity(EXPANSION_TERMS);
        let mut factorial = 1.0;
        for k in 0..EXPANSION_TERMS {
            if k > 0 {
                factorial *= k as f64;
            }
            let c = match integer {
                Some(n) if k + 1 == n as usize => 0.0,
                _ => zeta_real(s - k as f64) / factorial,
            };
            coeffs.push(c);
        }
        let (singular, harmonic) = match integer {
            Some(n) => {
                let m = n - 1;
                let fact: f64 = (1..=m).map(f64::from).product();
                let h: f64 = (1..=m).map(|i| 1.0 / f64::from(i)).sum();
                (1.0 / fact, h)
            }
            None => (libm::tgamma(1.0 - s), 0.0),
        };
        Self { integer, singular, harmonic, coeffs }
    }
}

thread_local! {
    static EXPANSIONS: RefCell<HashMap<u64, (f64, LogExpansion)>> = RefCell::new(HashMap::new());
}

fn with_expansion<T>(s: f64, f: impl FnOnce(&Expansion<'_>) -> T) -> T {
    EXPANSIONS.with(|cache| {
        let mut cache = cache.borrow_mut();
        let entry = cache.entry(s.to_bits()).or_insert_with(|| (s, LogExpansion::new(s)));
        f(&Expansion { s: entry.0, inner: &entry.1 })
    })
}

struct Expansion<'a> {
    s: f64,
    inner: &'a LogExpansion,
}

impl Expansion<'_> {
    fn eval(&self, delta: f64, drop_constant: bool) -> f64 {
        let e = self.inner;
        let mut regular = 0.0;
        for &c in e.coeffs.iter().skip(1).rev() {
            regular = regular * delta + c;
        }
        regular *= delta;
        if !drop_constant {
            regular += e.coeffs[0];
        }
        let singular = match e.integer {
            Some(n) => delta.powi(n as i32 - 1) * e.singular * (e.harmonic - (-delta).ln()),
            None => e.singular * (-delta).powf(self.s - 1.0),
        };
        regular + singular
    }
}

fn log_expansion(s: f64, delta: f64) -> f64 {
    with_expansion(s, |c| c.eval(delta, false))
}

/// Riemann zeta function for real `s > 1`.
pub fn zeta(s: f64) -> Result<f64> {
    if s.is_nan() || s <= 1.0 {
        return Err(domain(format!("zeta requires s > 1, got {s}")));
    }
    Ok(zeta_real(s))
}

/// Borwein's accelerated alternating series for `η`, converted to `ζ`.
const BORWEIN_N: usize = 40;

fn borwein_weights() -> &'static [f64; BORWEIN_N] {
    static WEIGHTS: OnceLock<[f64; BORWEIN_N]> = OnceLock::new();
    WEIGHTS.get_or_init(|| {
        let n = BORWEIN_N as f64;
        let mut d = [0.0f64; BORWEIN_N + 1];
        let mut term = 1.0 / n;
        let mut acc = term;
        d[0] = n * acc;
        for (i, di) in d.iter_mut().enumerate().skip(1) {
            let fi = i as f64;
            term *= 4.0 * (n + fi - 1.0) * (n - fi + 1.0) / ((2.0 * fi) * (2.0 * fi - 1.0));
            acc += term;
            *di = n * acc;
        }
        let dn = d[BORWEIN_N];
        let mut w = [0.0f64; BORWEIN_N];
        for (k, wk) in w.iter_mut().enumerate() {
            *wk = (dn - d[k]) / dn;
        }
        w
    })
}

/// `ζ(s)` on the whole real line except the pole at `s = 1`.
pub(crate) fn zeta_real(s: f64) -> f64 {
    if s == 1.0 {
        return f64::INFINITY;
    }
    if s == 0.0 {
        return -0.5;
    }
    if s > 0.0 {
        if s > 60.0 {
            return 1.0 + 2f64.powf(-s) + 3f64.powf(-s);
        }
        let w = borwein_weights();
        let mut eta = 0.0;
        for (k, &wk) in w.iter().enumerate() {
            let t = wk / ((k + 1) as f64).powf(s);
            if k % 2 == 0 {
                eta += t;
            } else {
                eta -= t;
            }
        }
        return eta / (1.0 - 2f64.powf(1.0 - s));
    }
    // trivial zeros
    if s.fract() == 0.0 && (s as i64) % 2 == 0 {
        return 0.0;
    }
    // functional equation: ζ(s) = 2^s π^(s-1) sin(πs/2) Γ(1-s) ζ(1-s)
    let t = 1.0 - s;
    2f64.powf(s) * PI.powf(s - 1.0) * (0.5 * PI * s).sin() * libm::tgamma(t) * zeta_real(t)
}

const INV_E: f64 = 1.0 / E;

/// The `-1` branch of the Lambert W function on `[-1/e, 0)`.
pub fn lambert_w_m1(x: f64) -> Result<f64> {
    lambert_w_m1_with(x, &PrecisionPolicy::default())
}

pub fn lambert_w_m1_with(x: f64, policy: &PrecisionPolicy) -> Result<f64> {
    if !(-INV_E * (1.0 + 4.0 * f64::EPSILON)..0.0).contains(&x) {
        return Err(domain(format!("W_-1 is defined on [-1/e, 0), got {x}")));
    }
    let x = x.max(-INV_E);
    if x == -INV_E {
        return Ok(-1.0);
    }
    // y e^y is decreasing on (-inf, -1]; bracket with the bound
    // W_-1(-e^(-u-1)) > -1 - sqrt(2u) - u.
    let u = -1.0 - (-x).ln();
    let mut lo = -2.0 - (2.0 * u).sqrt() - u;
    let mut hi = -1.0;
    let guess = if x < -0.25 {
        let p = -(2.0 * (1.0 + E * x)).max(0.0).sqrt();
        -1.0 + p - p * p / 3.0 + 11.0 / 72.0 * p * p * p
    } else {
        let l1 = (-x).ln();
        l1 - (-l1).ln()
    };
    solve_w(x, guess.clamp(lo, hi), &mut lo, &mut hi, policy, "W_-1")
}

/// The principal branch of the Lambert W function on `[-1/e, ∞)`.
pub fn lambert_w0(x: f64) -> Result<f64> {
    if x.is_nan() || x < -INV_E * (1.0 + 4.0 * f64::EPSILON) || x.is_infinite() {
        return Err(domain(format!("W_0 is defined on [-1/e, inf), got {x}")));
    }
    let x = x.max(-INV_E);
    if x == -INV_E {
        return Ok(-1.0);
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    // y e^y is increasing on [-1, inf)
    let mut lo = -1.0;
    let mut hi = if x < E { 1.0 } else { x.ln() };
    let guess = if x < -0.25 {
        let p = (2.0 * (1.0 + E * x)).max(0.0).sqrt();
        -1.0 + p - p * p / 3.0 + 11.0 / 72.0 * p * p * p
    } else if x < 3.0 {
        x / (1.0 + x) * (1.0 + 0.5 * (1.0 + x).ln())
    } else {
        let l1 = x.ln();
        l1 - l1.ln()
    };
    solve_w(x, guess.clamp(lo, hi), &mut lo, &mut hi, &PrecisionPolicy::default(), "W_0")
}

/// Halley iteration on `y e^y = x`, safeguarded by the bracket `[lo, hi]`.
fn solve_w(
    x: f64,
    mut y: f64,
    lo: &mut f64,
    hi: &mut f64,
    policy: &PrecisionPolicy,
    name: &str,
) -> Result<f64> {
    let tol = 1e-2 * policy.rel_tol * x.abs();
    let f_lo = *lo * lo.exp() - x;
    for _ in 0..200 {
        let ey = y.exp();
        let f = y * ey - x;
        if f.abs() <= tol {
            return Ok(y);
        }
        // keep the sign convention of the low end
        if (f > 0.0) == (f_lo > 0.0) {
            *lo = y;
        } else {
            *hi = y;
        }
        let fp = ey * (y + 1.0);
        let mut next = if fp != 0.0 { y - f / (fp - (y + 2.0) * f / (2.0 * y + 2.0)) } else { f64::NAN };
        if !(next > *lo && next < *hi) || !next.is_finite() {
            next = 0.5 * (*lo + *hi);
        }
        if (*hi - *lo).abs() <= 4.0 * f64::EPSILON * hi.abs().max(1.0) {
            return Ok(next);
        }
        y = next;
    }
    Err(Error::Convergence(format!("{name}({x}) did not converge")))
}

/// Brownian-bridge return weight `p_{βj}(0) = (2π β j)^{-d/2}`.
pub fn bridge_return_weight(d: u32, beta: f64, j: u64) -> f64 {
    debug_assert!(d >= 1 && beta > 0.0 && j >= 1);
    (2.0 * PI * beta * j as f64).powf(-0.5 * f64::from(d))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Euler–Maclaurin summation of ζ(s); an oracle independent of Borwein.
    fn zeta_em(s: f64) -> f64 {
        const B: [f64; 8] = [
            1.0 / 6.0,
            -1.0 / 30.0,
            1.0 / 42.0,
            -1.0 / 30.0,
            5.0 / 66.0,
            -691.0 / 2730.0,
            7.0 / 6.0,
            -3617.0 / 510.0,
        ];
        let n = 20.0f64;
        let mut sum: f64 = (1..20).map(|k| (k as f64).powf(-s)).sum();
        sum += n.powf(1.0 - s) / (s - 1.0) + 0.5 * n.powf(-s);
        let mut rising = s;
        let mut fact = 2.0;
        for (k, b) in B.iter().enumerate() {
            let k = k + 1;
            sum += b / fact * rising * n.powf(-s - 2.0 * k as f64 + 1.0);
            rising *= (s + 2.0 * k as f64 - 1.0) * (s + 2.0 * k as f64);
            fact *= (2.0 * k as f64 + 1.0) * (2.0 * k as f64 + 2.0);
        }
        sum
    }

    #[test]
    fn polylog_at_zero_is_zero() {
        assert_eq!(polylog(1.5, 0.0).unwrap(), 0.0);
        assert_eq!(polylog(0.5, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn zeta_two_is_pi_squared_over_six() {
        assert!((zeta(2.0).unwrap() - PI * PI / 6.0).abs() <= 1e-12);
    }

    #[test]
    fn zeta_matches_euler_maclaurin() {
        for s in [1.5, 2.5, 3.0, 4.5, 7.0] {
            let (a, b) = (zeta(s).unwrap(), zeta_em(s));
            assert!(((a - b) / b).abs() < 1e-13, "s={s}: {a} vs {b}");
        }
        assert!((zeta(1.5).unwrap() - 2.612_375_348_685).abs() < 1e-12);
        assert!((zeta(3.0).unwrap() - 1.202_056_903_159).abs() < 1e-12);
    }

    #[test]
    fn zeta_at_negative_arguments() {
        assert!((zeta_real(-1.0) + 1.0 / 12.0).abs() < 1e-15);
        assert_eq!(zeta_real(-2.0), 0.0);
        assert!((zeta_real(-3.0) - 1.0 / 120.0).abs() < 1e-15);
        assert!((zeta_real(0.5) + 1.460_354_508_809_586_8).abs() < 1e-14);
    }

    #[test]
    fn polylog_at_one_is_zeta() {
        assert_eq!(polylog(2.5, 1.0).unwrap(), zeta(2.5).unwrap());
        assert!((polylog(2.5, 1.0).unwrap() - 1.341_487_257_251).abs() < 1e-12);
    }

    #[test]
    fn polylog_domain_errors() {
        assert!(matches!(polylog(1.5, 1.2), Err(Error::Domain(_))));
        assert!(matches!(polylog(1.0, 1.0), Err(Error::Domain(_))));
        assert!(matches!(polylog(0.5, 1.0), Err(Error::Domain(_))));
        assert!(matches!(polylog(-1.0, 0.5), Err(Error::Domain(_))));
        assert!(matches!(zeta(1.0), Err(Error::Domain(_))));
        assert!(matches!(zeta(0.5), Err(Error::Domain(_))));
    }

    #[test]
    fn closed_forms_at_integer_orders() {
        for z in [0.3, 0.6, 0.9, 0.999, 0.999_999] {
            let li1 = polylog(1.0, z).unwrap();
            assert!((li1 + (1.0 - z).ln()).abs() < 1e-13 * li1.abs().max(1.0), "z={z}");
        }
        // Li_2(1/2) = π²/12 - ln²2 / 2
        let li2 = polylog(2.0, 0.5).unwrap();
        assert!((li2 - (PI * PI / 12.0 - 0.5 * 2f64.ln().powi(2))).abs() < 1e-15);
        // crossing the series/expansion boundary is continuous
        let a = polylog(2.0, SERIES_CUTOFF).unwrap();
        let b = polylog(2.0, SERIES_CUTOFF + 1e-15).unwrap();
        assert!((a - b).abs() < 1e-14);
    }

    #[test]
    fn shifted_expansion_matches_difference() {
        for s in [1.5, 2.0, 2.5, 3.5] {
            for delta in [-1e-3, -0.05, -0.4, -2.0] {
                let a = polylog_exp_minus_zeta(s, delta).unwrap();
                let b = polylog_exp(s, delta).unwrap() - zeta(s).unwrap();
                assert!((a - b).abs() < 1e-14, "s={s} δ={delta}: {a} vs {b}");
            }
        }
    }

    fn bisect_w(x: f64, mut lo: f64, mut hi: f64) -> f64 {
        // y e^y - x changes sign on [lo, hi]
        let f = |y: f64| y * y.exp() - x;
        let flo = f(lo);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if (f(mid) > 0.0) == (flo > 0.0) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn lambert_m1_against_bisection() {
        assert_eq!(lambert_w_m1(-INV_E).unwrap(), -1.0);
        for x in [-0.1, -0.01, -0.3, -1e-8] {
            let y = lambert_w_m1(x).unwrap();
            let oracle = bisect_w(x, -60.0, -1.0);
            assert!(y < -1.0);
            assert!((y - oracle).abs() < 1e-10 * oracle.abs(), "x={x}: {y} vs {oracle}");
            assert!((y * y.exp() - x).abs() <= 1e-12 * x.abs());
        }
    }

    #[test]
    fn lambert_domain() {
        assert!(lambert_w_m1(0.0).is_err());
        assert!(lambert_w_m1(-0.5).is_err());
        assert!(lambert_w_m1(0.1).is_err());
        assert!(lambert_w0(-0.5).is_err());
    }

    #[test]
    fn lambert_w0_values() {
        assert!((lambert_w0(E).unwrap() - 1.0).abs() < 1e-14);
        for x in [-0.35, -0.1, -1e-6, 0.5, 10.0, 1e6] {
            let y = lambert_w0(x).unwrap();
            assert!(y >= -1.0);
            assert!((y * y.exp() - x).abs() <= 1e-13 * x.abs().max(1e-300), "x={x}");
        }
    }

    #[test]
    fn bridge_weight_values() {
        let w = bridge_return_weight(3, 1.0, 1);
        assert!((w - 0.063_493_635_934_240).abs() < 1e-14);
        for d in [3, 4, 5, 7] {
            let ratio = bridge_return_weight(d, 1.7, 4) / bridge_return_weight(d, 1.7, 1);
            assert!((ratio - 4f64.powf(-0.5 * f64::from(d))).abs() < 1e-15);
        }
        let w4 = bridge_return_weight(4, 2.0, 1);
        assert!((w4 - (2.0 * PI).powi(-2) / 4.0).abs() < 1e-16);
    }

    #[test]
    fn policy_validation() {
        assert!(PrecisionPolicy::new(1e-5, 1_000).is_err());
        assert!(PrecisionPolicy::new(1e-8, 999).is_err());
        assert!(PrecisionPolicy::new(0.0, 5_000).is_err());
        assert!(PrecisionPolicy::new(1e-8, 5_000).is_ok());
    }

    proptest! {
        #[test]
        fn polylog_monotone_in_z(s in 0.6f64..5.0, z in 0.0f64..0.999, dz in 1e-4f64..1e-3) {
            let z2 = (z + dz).min(0.9999);
            prop_assert!(polylog(s, z2).unwrap() > polylog(s, z).unwrap());
        }

        #[test]
        fn polylog_decreasing_in_s(s in 0.6f64..5.0, ds in 1e-3f64..0.5, z in 0.01f64..0.999) {
            prop_assert!(polylog(s + ds, z).unwrap() < polylog(s, z).unwrap());
        }

        #[test]
        fn direct_sum_consistency(s in 0.5f64..6.0, z in 0.0f64..=0.5) {
            let partial: f64 = (1..=200).map(|j| z.powi(j) / f64::from(j).powf(s)).sum();
            let li = polylog(s, z).unwrap();
            prop_assert!((partial - li).abs() <= 1e-12 * li.abs().max(1e-300));
        }

        #[test]
        fn w_m1_branch_identity(t in 0.0f64..1.0) {
            // log-uniform over [-1/e + 1e-9, -1e-12]
            let lo = (1e-12f64).ln();
            let hi = (INV_E - 1e-9).ln();
            let x = -(lo + t * (hi - lo)).exp();
            let y = lambert_w_m1(x).unwrap();
            prop_assert!(y <= -1.0);
            prop_assert!((y * y.exp() - x).abs() <= 1e-12 * x.abs());
        }
    }
}
