//! Reference values computed without the library's own numerics.
#![allow(dead_code)]

use std::f64::consts::PI;

/// `E_1(y)` for `0 < y ≤ 50`.
fn exp_integral_e1(y: f64) -> f64 {
    if y < 2.0 {
        let mut term = 1.0;
        let mut sum = 0.0;
        for k in 1..60 {
            term *= -y / k as f64;
            sum += term / k as f64;
        }
        -0.577_215_664_901_532_9 - y.ln() - sum
    } else {
        // modified Lentz evaluation of the continued fraction
        let tiny = 1e-300;
        let mut b = y + 1.0;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..500 {
            let a = -((i * i) as f64);
            b += 2.0;
            d = 1.0 / (a * d + b);
            c = b + a / c;
            let del = c * d;
            h *= del;
            if (del - 1.0).abs() < 1e-17 {
                break;
            }
        }
        h * (-y).exp()
    }
}

/// `Γ(a, y)` for integer or half-integer `a ≤ 1/2`, by downward recurrence
/// from `Γ(1/2, y) = √π erfc(√y)` or `Γ(0, y) = E_1(y)`.
fn upper_gamma(a: f64, y: f64) -> f64 {
    let (mut cur, mut g) = if (a.fract()).abs() > 0.25 {
        (0.5, PI.sqrt() * libm::erfc(y.sqrt()))
    } else {
        (0.0, exp_integral_e1(y))
    };
    while cur > a + 0.25 {
        g = (g - y.powf(cur - 1.0) * (-y).exp()) / (cur - 1.0);
        cur -= 1.0;
    }
    g
}

/// `n`-th derivative of `e^{-δx} x^{-s}`.
fn derivative(s: f64, delta: f64, x: f64, n: u32) -> f64 {
    let mut total = 0.0;
    let mut binom = 1.0;
    for k in 0..=n {
        // d^k/dx^k x^{-s} = (-1)^k s(s+1)...(s+k-1) x^{-s-k}
        let mut rising = 1.0;
        for i in 0..k {
            rising *= s + i as f64;
        }
        let power = if k % 2 == 0 { rising } else { -rising } * x.powf(-s - k as f64);
        let exp_part = (-delta).powi((n - k) as i32) * (-delta * x).exp();
        total += binom * exp_part * power;
        binom = binom * (n - k) as f64 / (k + 1) as f64;
    }
    total
}

/// `Li_s(e^{-δ})` by Euler–Maclaurin summation for integer or half-integer
/// `s > 1` and `0 ≤ δ ≤ 1`.
pub fn polylog_em(s: f64, delta: f64) -> f64 {
    let m: f64 = 50.0;
    let f = |x: f64| (-delta * x).exp() * x.powf(-s);
    let mut head = 0.0;
    for k in (1..50).rev() {
        head += f(k as f64);
    }
    // ∫_M^∞ e^{-δx} x^{-s} dx = δ^{s-1} Γ(1-s, δM)
    let tail = if delta == 0.0 {
        m.powf(1.0 - s) / (s - 1.0)
    } else {
        delta.powf(s - 1.0) * upper_gamma(1.0 - s, delta * m)
    };
    let b2 = 1.0 / 6.0;
    let b4 = -1.0 / 30.0;
    let b6 = 1.0 / 42.0;
    let corr = -b2 / 2.0 * derivative(s, delta, m, 1)
        - b4 / 24.0 * derivative(s, delta, m, 3)
        - b6 / 720.0 * derivative(s, delta, m, 5);
    head + tail + 0.5 * f(m) + corr
}

pub fn zeta_em(s: f64) -> f64 {
    polylog_em(s, 0.0)
}

/// Free-gas pressure `(2π)^{-d/2} β^{-d/2} Li_{d/2+1}(e^{βμ})`.
pub fn pressure_em(d: u32, beta: f64, mu: f64) -> f64 {
    let h = 0.5 * d as f64;
    (2.0 * PI * beta).powf(-h) * polylog_em(h + 1.0, -beta * mu)
}

/// Maximum of a unimodal function on `[a, b]` by golden-section search.
pub fn golden_max<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64) -> (f64, f64) {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..200 {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    [(a, f(a)), (c, fc), (d, fd), (b, f(b))].into_iter().fold((a, f64::NEG_INFINITY), |m, p| {
        if p.1 > m.1 {
            p
        } else {
            m
        }
    })
}

/// `sup_{μ ≤ 0} [βx(μ − μ_ref) − (P(μ) − P(μ_ref))]`.
pub fn rate_legendre(d: u32, beta: f64, mu_ref: f64, x: f64) -> f64 {
    let p_ref = pressure_em(d, beta, mu_ref);
    let obj = |mu: f64| beta * x * (mu - mu_ref) - (pressure_em(d, beta, mu) - p_ref);
    golden_max(obj, -60.0 / beta, 0.0).1
}

/// Every partition of `n` as `(length, multiplicity)` pairs.
pub fn partitions(n: u64) -> Vec<Vec<(u64, u64)>> {
    fn rec(rest: u64, max_part: u64, acc: &mut Vec<(u64, u64)>, out: &mut Vec<Vec<(u64, u64)>>) {
        if rest == 0 {
            out.push(acc.clone());
            return;
        }
        for j in (1..=max_part.min(rest)).rev() {
            for k in 1..=rest / j {
                acc.push((j, k));
                rec(rest - j * k, j - 1, acc, out);
                acc.pop();
            }
        }
    }
    let mut out = Vec::new();
    rec(n, n, &mut Vec::new(), &mut out);
    out
}

pub fn ln_factorial(n: u64) -> f64 {
    (1..=n).map(|k| (k as f64).ln()).sum()
}

/// `ln λ_j = ln(V (2πβj)^{-d/2} / j)` at `μ = 0`.
pub fn ln_lambda(d: u32, beta: f64, volume: f64, j: u64) -> f64 {
    let jf = j as f64;
    volume.ln() - 0.5 * d as f64 * (2.0 * PI * beta * jf).ln() - jf.ln()
}

/// Unnormalised log weight of a cycle configuration with the counter-term.
pub fn ln_config_weight(d: u32, beta: f64, volume: f64, q: u64, b: f64, parts: &[(u64, u64)]) -> f64 {
    parts
        .iter()
        .map(|&(j, n)| {
            let counter = if j >= q { 0.5 * b * beta * ((j * n) as f64).powi(2) / volume } else { 0.0 };
            n as f64 * ln_lambda(d, beta, volume, j) - ln_factorial(n) + counter
        })
        .sum()
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let top = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    top + xs.iter().map(|x| (x - top).exp()).sum::<f64>().ln()
}

/// `ln E_0[e^{counter}; N = n]` for the `μ = 0` loop measure.
pub fn brute_log_z(d: u32, beta: f64, volume: f64, q: u64, b: f64, n: u64) -> f64 {
    let mass = volume * (2.0 * PI * beta).powf(-0.5 * d as f64) * zeta_em(0.5 * d as f64 + 1.0);
    let terms: Vec<f64> = partitions(n).iter().map(|p| ln_config_weight(d, beta, volume, q, b, p)).collect();
    log_sum_exp(&terms) - mass
}
