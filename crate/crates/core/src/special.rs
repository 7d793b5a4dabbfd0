//! Error-function family and normal-distribution helpers.
//!
//! `erf` uses its Maclaurin series for small arguments and a Lentz
//! continued fraction for the tail, which keeps `ln_erfc` meaningful far
//! beyond the underflow point of `erfc` itself.

const SERIES_CUTOFF: f64 = 2.5;
const FRAC_1_SQRT_PI: f64 = 0.5641895835477563;

/// `2/sqrt(pi) * integral_0^x exp(-t^2) dt` by alternating series (|x| <= cutoff).
fn erf_series(x: f64) -> f64 {
    let x2 = x * x;
    let mut term = x;
    let mut sum = x;
    for n in 1..200 {
        let n = n as f64;
        term *= -x2 / n;
        let contrib = term / (2.0 * n + 1.0);
        sum += contrib;
        if contrib.abs() <= 1e-17 * sum.abs() {
            break;
        }
    }
    sum * 2.0 * FRAC_1_SQRT_PI
}

/// Continued-fraction factor `f(x)` with `erfc(x) = exp(-x^2)/(x*sqrt(pi)) * f(x)`,
/// valid for large positive `x` (modified Lentz iteration).
fn erfc_cf_factor(x: f64) -> f64 {
    let x2 = x * x;
    let tiny = 1e-300;
    let mut f = tiny;
    let mut c = f;
    let mut d = 0.0;
    // b_0 = 1, a_k = k/2 / x^2 against unit b terms.
    for k in 0..200 {
        let a = if k == 0 { 1.0 } else { k as f64 / (2.0 * x2) };
        let b = 1.0;
        d = b + a * d;
        if d.abs() < tiny {
            d = tiny;
        }
        c = b + a / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = 1.0 / d;
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            break;
        }
    }
    f
}

pub fn erf(x: f64) -> f64 {
    if x < 0.0 {
        return -erf(-x);
    }
    if x <= SERIES_CUTOFF {
        erf_series(x)
    } else {
        1.0 - erfc(x)
    }
}

pub fn erfc(x: f64) -> f64 {
    if x < 0.0 {
        return 2.0 - erfc(-x);
    }
    if x <= SERIES_CUTOFF {
        1.0 - erf_series(x)
    } else {
        (-x * x).exp() * FRAC_1_SQRT_PI / x * erfc_cf_factor(x)
    }
}

/// `ln(erfc(x))`, finite far past the underflow point of `erfc`.
pub fn ln_erfc(x: f64) -> f64 {
    if x <= SERIES_CUTOFF {
        erfc(x).ln()
    } else {
        -x * x + (FRAC_1_SQRT_PI / x * erfc_cf_factor(x)).ln()
    }
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Standard normal density.
pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// `ln P(Z > u)` for a standard normal, stable for large `u`.
pub fn ln_normal_sf(u: f64) -> f64 {
    ln_erfc(u / std::f64::consts::SQRT_2) - std::f64::consts::LN_2
}
