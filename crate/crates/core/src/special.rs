//! Scalar special functions used across the crate.

use statrs::function::erf::{erfc, erfc_inv};
use std::f64::consts::{FRAC_1_SQRT_2, PI, SQRT_2};

/// Standard normal density.
#[inline]
pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// Standard normal CDF.
#[inline]
pub fn norm_cdf(x: f64) -> f64 {
    if x == f64::INFINITY {
        1.0
    } else if x == f64::NEG_INFINITY {
        0.0
    } else {
        0.5 * erfc(-x * FRAC_1_SQRT_2)
    }
}

/// Inverse of the standard normal CDF on (0, 1).
#[inline]
pub fn norm_quantile(p: f64) -> f64 {
    if p <= 0.0 {
        f64::NEG_INFINITY
    } else if p >= 1.0 {
        f64::INFINITY
    } else {
        -SQRT_2 * erfc_inv(2.0 * p)
    }
}

/// Exponentially scaled modified Bessel functions `(e^{-x} I0(x), e^{-x} I1(x))`
/// for `x >= 0`. Power series below 30, asymptotic expansion above.
pub fn bessel_i0e_i1e(x: f64) -> (f64, f64) {
    assert!(x >= 0.0, "bessel_i0e_i1e: x must be non-negative");
    if x < 30.0 {
        let q = 0.25 * x * x;
        let mut t0 = 1.0;
        let mut t1 = 0.5 * x;
        let mut s0 = t0;
        let mut s1 = t1;
        for k in 1..200 {
            let k = k as f64;
            t0 *= q / (k * k);
            t1 *= q / (k * (k + 1.0));
            s0 += t0;
            s1 += t1;
            if t0 < 1e-17 * s0 && t1 < 1e-17 * s1.max(f64::MIN_POSITIVE) {
                break;
            }
        }
        let e = (-x).exp();
        (s0 * e, s1 * e)
    } else {
        // I_nu(x) e^{-x} ~ 1/sqrt(2 pi x) * sum_k (-1)^k a_k(nu) / x^k
        let asym = |nu: f64| {
            let mu = 4.0 * nu * nu;
            let mut term = 1.0;
            let mut sum = 1.0;
            for k in 1..12 {
                let kf = k as f64;
                term *= -(mu - (2.0 * kf - 1.0).powi(2)) / (8.0 * kf * x);
                sum += term;
            }
            sum / (2.0 * PI * x).sqrt()
        };
        (asym(0.0), asym(1.0))
    }
}
