//! Standard normal density and distribution function.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

/// Standard normal density φ(x).
pub fn pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// Standard normal CDF Φ(x), through erfc so the lower tail keeps full
/// relative precision far below x = −8.
pub fn cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

/// Inverse Mills ratio φ(r)/Φ(r), stable for very negative r.
pub fn inverse_mills(r: f64) -> f64 {
    if r > -30.0 {
        return pdf(r) / cdf(r);
    }
    // Asymptotic series of Φ(r)/φ(r) for r → −∞.
    let r2 = r * r;
    -r / (1.0 - 1.0 / r2 + 3.0 / (r2 * r2) - 15.0 / (r2 * r2 * r2))
}
