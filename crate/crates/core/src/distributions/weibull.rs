//! Log-negative Weibull transmittance from beam wandering.
//!
//! The beam centre deflection `r` is Rayleigh distributed with scale
//! `sigma_b`, and the transmittance through the receiving aperture is
//! `T = t0 · exp(-(r / radius)^shape)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::{integrate_breaks, DEFAULT_ABS_TOL};
use crate::special::bessel_i0e_i1e;

/// Target moments used to calibrate `t0` and `radius`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeibullTarget {
    pub mean_t: f64,
    pub var_sqrt_t: f64,
}

/// Reference beam configurations `(W/a, sigma_b)` with their target moments.
const REFERENCE: [(f64, f64, WeibullTarget); 2] = [
    (1.25, 0.8, WeibullTarget { mean_t: 0.5, var_sqrt_t: 0.018 }),
    (1.47, 0.6, WeibullTarget { mean_t: 0.5, var_sqrt_t: 0.0047 }),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogNegWeibull {
    /// Beam width over aperture radius.
    pub w_over_a: f64,
    /// Rayleigh scale of the beam deflection.
    pub sigma_b: f64,
    /// Maximal transmittance.
    pub t0: f64,
    /// Scale radius.
    pub radius: f64,
    /// Shape parameter.
    pub shape: f64,
}

impl LogNegWeibull {
    /// Shape parameter for a beam of width `W` on an aperture of radius `a`.
    pub fn beam_shape(w_over_a: f64) -> Result<f64> {
        if !(w_over_a.is_finite() && w_over_a > 0.0) {
            return Err(Error::InvalidParameter(format!("W/a must be positive (got {w_over_a})")));
        }
        let x = 4.0 / (w_over_a * w_over_a);
        let t0 = -(-2.0 / (w_over_a * w_over_a)).exp_m1();
        let (i0e, i1e) = bessel_i0e_i1e(x);
        let l = (2.0 * t0 * t0 / (1.0 - i0e)).ln();
        let shape = 2.0 * x * i1e / (1.0 - i0e) / l;
        if !(shape.is_finite() && shape > 0.0) {
            return Err(Error::InvalidParameter(format!("W/a = {w_over_a} gives no valid shape")));
        }
        Ok(shape)
    }

    /// Calibrated law for one of the reference beam configurations
    /// `(W/a, sigma_b) ∈ {(1.25, 0.8), (1.47, 0.6)}`.
    pub fn reference(w_over_a: f64, sigma_b: f64) -> Result<Self> {
        let target = REFERENCE
            .iter()
            .find(|(w, s, _)| (w - w_over_a).abs() < 1e-9 && (s - sigma_b).abs() < 1e-9)
            .map(|r| r.2)
            .ok_or_else(|| {
                Error::InvalidParameter(format!(
                    "no reference moments for W/a = {w_over_a}, sigma_b = {sigma_b}; use LogNegWeibull::calibrate"
                ))
            })?;
        Self::calibrate(w_over_a, sigma_b, target)
    }

    /// Fix the shape from `W/a`, then solve for `radius / sigma_b` and `t0`
    /// so that `⟨T⟩` and `Var(√T)` match `target`.
    pub fn calibrate(w_over_a: f64, sigma_b: f64, target: WeibullTarget) -> Result<Self> {
        if !(sigma_b.is_finite() && sigma_b > 0.0) {
            return Err(Error::InvalidParameter(format!("sigma_b must be positive (got {sigma_b})")));
        }
        if !(target.mean_t > 0.0 && target.mean_t <= 1.0 && target.var_sqrt_t > 0.0) {
            return Err(Error::InvalidParameter(format!("unreachable target {target:?}")));
        }
        let shape = Self::beam_shape(w_over_a)?;
        let want = target.var_sqrt_t / target.mean_t;
        if want >= 1.0 {
            return Err(Error::RootFinding(format!("Var(√T)/⟨T⟩ = {want} must be below 1")));
        }

        // 1 - g²/h falls from 1 to 0 as s = radius / sigma_b grows.
        let ratio = |s: f64| -> Result<f64> {
            let (g, h) = scaled_means(s, shape)?;
            Ok(1.0 - g * g / h)
        };
        let (mut lo, mut hi) = (1e-2_f64.ln(), 1e3_f64.ln());
        if ratio(lo.exp())? < want || ratio(hi.exp())? > want {
            return Err(Error::RootFinding(format!("cannot bracket radius for {target:?}")));
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if ratio(mid.exp())? > want {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-13 {
                break;
            }
        }
        let s = (0.5 * (lo + hi)).exp();
        let (_, h) = scaled_means(s, shape)?;
        let t0 = target.mean_t / h;
        if t0 > 1.0 {
            return Err(Error::RootFinding(format!(
                "target {target:?} needs t0 = {t0} > 1 at W/a = {w_over_a}"
            )));
        }
        Ok(LogNegWeibull {
            w_over_a,
            sigma_b,
            t0,
            radius: s * sigma_b,
            shape,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.t0 > 0.0
            && self.t0 <= 1.0
            && self.radius.is_finite()
            && self.radius > 0.0
            && self.shape.is_finite()
            && self.shape > 0.0
            && self.sigma_b.is_finite()
            && self.sigma_b > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("invalid log-negative Weibull parameters {self:?}")))
        }
    }

    fn half_ratio(&self) -> f64 {
        let q = self.radius / self.sigma_b;
        0.5 * q * q
    }

    pub fn density(&self, t: f64) -> f64 {
        if t <= 0.0 || t >= self.t0 {
            return 0.0;
        }
        self.log_density((self.t0 / t).ln()) / t
    }

    /// `t·f(t)` written in `l = ln(t0/t)`, which stays exact where `t` rounds to `t0`.
    fn log_density(&self, l: f64) -> f64 {
        let c = self.half_ratio();
        let e = 2.0 / self.shape;
        (-c * l.powf(e)).exp() * c * e * l.powf(e - 1.0)
    }

    pub fn cdf(&self, t: f64) -> f64 {
        if t <= 0.0 {
            0.0
        } else if t >= self.t0 {
            1.0
        } else {
            (-self.half_ratio() * (self.t0 / t).ln().powf(2.0 / self.shape)).exp()
        }
    }

    pub fn quantile(&self, p: f64) -> f64 {
        if p <= 0.0 {
            return 0.0;
        }
        let r = self.sigma_b * (-2.0 * p.min(1.0).ln()).sqrt();
        self.t0 * (-(r / self.radius).powf(self.shape)).exp()
    }

    /// CDF level at which the deflection equals `radius`; the transmittance
    /// drops fastest around here.
    pub(crate) fn knee_level(&self) -> f64 {
        (-self.half_ratio()).exp()
    }

    /// Mass of [`density`](Self::density), integrated in the deflection
    /// variable `r` where the integrand is smooth.
    pub(crate) fn mass_via_displacement(&self) -> Result<f64> {
        let r_max = 40.0 * self.sigma_b;
        let mut breaks = vec![0.0, self.sigma_b, r_max];
        if self.radius < r_max {
            let pos = breaks.partition_point(|&b| b < self.radius);
            if breaks[pos] != self.radius {
                breaks.insert(pos, self.radius);
            }
        }
        let q = integrate_breaks(
            |r| {
                if r <= 0.0 {
                    return [0.0];
                }
                let x = (r / self.radius).powf(self.shape);
                [self.log_density(x) * self.shape * x / r]
            },
            &breaks,
            DEFAULT_ABS_TOL,
            "weibull mass",
        )?;
        Ok(q.value[0])
    }
}

/// `(E[e^{-(ρ/s)^λ / 2}], E[e^{-(ρ/s)^λ}])` for `ρ ~ Rayleigh(1)`, integrated
/// over the CDF level `v` with `ρ = √(-2 ln v)`.
fn scaled_means(s: f64, shape: f64) -> Result<(f64, f64)> {
    let knee = (-0.5 * s * s).exp();
    let mut breaks = vec![0.0, 0.25, 0.5, 0.75, 1.0];
    if knee > 0.0 && knee < 1.0 {
        let pos = breaks.partition_point(|&b| b < knee);
        if breaks[pos] != knee {
            breaks.insert(pos, knee);
        }
    }
    let q = integrate_breaks(
        |v| {
            let rho = (-2.0 * v.ln()).sqrt();
            let x = (rho / s).powf(shape);
            [(-0.5 * x).exp(), (-x).exp()]
        },
        &breaks,
        1e-12,
        "weibull calibration",
    )?;
    Ok((q.value[0], q.value[1]))
}
