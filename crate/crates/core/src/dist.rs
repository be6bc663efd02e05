//! Normal and chi-square tail functions.

use statrs::function::erf::{erfc, erfc_inv};
use statrs::function::gamma::gamma_ur;

/// Upper tail of the standard normal, P(Z > t).
pub fn normal_sf(t: f64) -> f64 {
    0.5 * erfc(t / std::f64::consts::SQRT_2)
}

/// Inverse of `normal_sf` on (0, 1).
pub fn normal_isf(x: f64) -> f64 {
    if x <= 0.0 {
        return f64::INFINITY;
    }
    if x >= 1.0 {
        return f64::NEG_INFINITY;
    }
    std::f64::consts::SQRT_2 * erfc_inv(2.0 * x)
}

/// Upper tail of the chi-square distribution with `df` degrees of freedom.
pub fn chi2_sf(x: f64, df: usize) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x.is_infinite() {
        return 0.0;
    }
    gamma_ur(df as f64 / 2.0, x / 2.0)
}
