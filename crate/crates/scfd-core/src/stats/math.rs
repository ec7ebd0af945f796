//! Scalar special functions for the statistical core.
//!
//! Everything here is self-contained: `erf` uses the non-alternating
//! Maclaurin series for small arguments and the Laplace continued fraction
//! for the tail, and `erf_inv` polishes a cheap closed-form seed with
//! Newton steps against that `erf`.

/// 2 / sqrt(pi)
pub const FRAC_2_SQRT_PI: f64 = 1.128_379_167_095_512_6;

/// Error function.
///
/// Series branch for |x| < 4, continued-fraction branch beyond; absolute
/// error is below 1e-14 everywhere we evaluate it.
pub fn erf(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    if x == f64::INFINITY {
        return 1.0;
    }
    if x == f64::NEG_INFINITY {
        return -1.0;
    }
    let ax = x.abs();
    if ax < 4.0 {
        erf_series(x)
    } else if x > 0.0 {
        1.0 - erfc_tail(ax)
    } else {
        erfc_tail(ax) - 1.0
    }
}

/// Complementary error function, 1 - erf(x).
pub fn erfc(x: f64) -> f64 {
    if x >= 4.0 {
        erfc_tail(x)
    } else {
        1.0 - erf(x)
    }
}

// erf(x) = 2/sqrt(pi) * x * exp(-x^2) * sum_{n>=0} (2x^2)^n / (2n+1)!!
// All terms are positive, so there is no cancellation.
fn erf_series(x: f64) -> f64 {
    let xx = 2.0 * x * x;
    let mut term = 1.0f64;
    let mut sum = 1.0f64;
    let mut n = 1u32;
    while term > 1e-18 * sum && n < 400 {
        term *= xx / (2 * n + 1) as f64;
        sum += term;
        n += 1;
    }
    FRAC_2_SQRT_PI * x * (-x * x).exp() * sum
}

// Laplace continued fraction, valid for large x:
//   erfc(x) = exp(-x^2)/sqrt(pi) * 1/(x + 1/(2x + 2/(x + 3/(2x + ...))))
// Evaluated bottom-up with fixed depth; for x >= 4 this is far more than
// enough for full double precision.
fn erfc_tail(x: f64) -> f64 {
    let mut t = 0.0f64;
    for k in (1..=80u32).rev() {
        let den = if k % 2 == 1 { 2.0 * x } else { x };
        t = k as f64 / (den + t);
    }
    (-x * x).exp() / (std::f64::consts::PI).sqrt() / (x + t)
}

/// Inverse error function.
///
/// The seed is a truncated odd series for small y and a log-based tail
/// estimate otherwise; Newton refinement against [`erf`] brings the result
/// to machine precision. For erf the Newton iterate from below converges
/// monotonically (the function is increasing and concave on x > 0), so no
/// damping is needed.
pub fn erf_inv(y: f64) -> f64 {
    if y.is_nan() {
        return f64::NAN;
    }
    if y >= 1.0 {
        return f64::INFINITY;
    }
    if y <= -1.0 {
        return f64::NEG_INFINITY;
    }
    if y == 0.0 {
        return 0.0;
    }
    let sign = y.signum();
    let ay = y.abs();

    let mut x = if ay <= 0.8 {
        // erf_inv(y) = sqrt(pi)/2 * (y + pi/12 y^3 + 7 pi^2/480 y^5 + ...)
        let pi = std::f64::consts::PI;
        let y2 = ay * ay;
        (pi.sqrt() / 2.0) * ay * (1.0 + pi / 12.0 * y2 + 7.0 * pi * pi / 480.0 * y2 * y2)
    } else {
        // From erfc(x) ~ exp(-x^2)/(x sqrt(pi)): x ~ sqrt(u - ln(pi u)/2),
        // u = -ln(1-y).
        let u = -(1.0 - ay).ln();
        (u - 0.5 * (std::f64::consts::PI * u).ln().max(0.0)).sqrt()
    };

    for _ in 0..100 {
        let err = erf(x) - ay;
        let deriv = FRAC_2_SQRT_PI * (-x * x).exp();
        if deriv == 0.0 {
            break;
        }
        let step = err / deriv;
        x -= step;
        if step.abs() < 1e-15 * (1.0 + x.abs()) {
            break;
        }
    }
    sign * x
}
