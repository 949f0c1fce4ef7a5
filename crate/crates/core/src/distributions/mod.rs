//! Transmittance distributions `f(T)` on `[0, 1]`.
//!
//! Every analytic family exposes expectations through a variable change that
//! keeps the integrand smooth: `u = √T` for the uniform law, the standard
//! score for the truncated normal and the CDF level for the log-negative
//! Weibull law (whose density diverges at its upper edge). Empirical traces
//! are averaged directly.

mod empirical;
mod weibull;

pub use empirical::Empirical;
pub use weibull::{LogNegWeibull, WeibullTarget};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_range, Error, Result};
use crate::par::{self, Exec};
use crate::quadrature::{integrate_breaks, kronrod_nodes, DEFAULT_ABS_TOL};
use crate::rng::{self, domain};
use crate::special::{norm_cdf, norm_pdf, norm_quantile};

/// Samples are drawn in chunks with one RNG stream per chunk.
const SAMPLE_CHUNK: usize = 4096;

// Standard scores beyond this carry < 1e-300 of normal mass.
const Z_CLIP: f64 = 38.0;

/// A fading law for the channel transmittance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TransmittanceDistribution {
    Uniform { lo: f64, hi: f64 },
    TruncatedNormal { mean: f64, std: f64 },
    LogNegativeWeibull(LogNegWeibull),
    Empirical(Empirical),
}

/// First moments of `T` and `√T`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mean_t: f64,
    pub mean_sqrt_t: f64,
    pub var_sqrt_t: f64,
}

impl Moments {
    pub fn from_means(mean_t: f64, mean_sqrt_t: f64) -> Self {
        Moments {
            mean_t,
            mean_sqrt_t,
            // Rounding can push this a hair below zero for point masses.
            var_sqrt_t: (mean_t - mean_sqrt_t * mean_sqrt_t).max(0.0),
        }
    }

    /// Effective fixed-channel transmittance `⟨√T⟩²`.
    pub fn effective_t(&self) -> f64 {
        self.mean_sqrt_t * self.mean_sqrt_t
    }
}

impl TransmittanceDistribution {
    pub fn uniform(lo: f64, hi: f64) -> Result<Self> {
        let d = TransmittanceDistribution::Uniform { lo, hi };
        d.validate()?;
        Ok(d)
    }

    pub fn truncated_normal(mean: f64, std: f64) -> Result<Self> {
        let d = TransmittanceDistribution::TruncatedNormal { mean, std };
        d.validate()?;
        Ok(d)
    }

    /// Log-negative Weibull law for one of the reference beam parameters
    /// (see [`LogNegWeibull::reference`]).
    pub fn log_negative_weibull(w_over_a: f64, sigma_b: f64) -> Result<Self> {
        Ok(TransmittanceDistribution::LogNegativeWeibull(
            LogNegWeibull::reference(w_over_a, sigma_b)?,
        ))
    }

    pub fn empirical(samples: Vec<f64>) -> Result<Self> {
        Ok(TransmittanceDistribution::Empirical(Empirical::new(samples, None)?))
    }

    /// A point mass at `t` (zero fluctuation).
    pub fn fixed(t: f64) -> Result<Self> {
        Self::empirical(vec![t])
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            TransmittanceDistribution::Uniform { lo, hi } => {
                check_range("uniform.lo", *lo, 0.0, 1.0)?;
                check_range("uniform.hi", *hi, 0.0, 1.0)?;
                if lo >= hi {
                    return Err(Error::InvalidParameter(format!(
                        "uniform bounds must satisfy lo < hi (got {lo}, {hi})"
                    )));
                }
                Ok(())
            }
            TransmittanceDistribution::TruncatedNormal { mean, std } => {
                if !mean.is_finite() {
                    return Err(Error::InvalidParameter("truncated normal mean must be finite".into()));
                }
                if !(std.is_finite() && *std > 0.0) {
                    return Err(Error::InvalidParameter(format!(
                        "truncated normal std must be positive (got {std})"
                    )));
                }
                if self.normal_mass() <= 1e-300 {
                    return Err(Error::InvalidParameter(format!(
                        "normal({mean}, {std}) has no mass on [0, 1]"
                    )));
                }
                Ok(())
            }
            TransmittanceDistribution::LogNegativeWeibull(w) => w.validate(),
            TransmittanceDistribution::Empirical(e) => e.validate(),
        }
    }

    /// Short label used in reports and CSV output.
    pub fn label(&self) -> String {
        match self {
            TransmittanceDistribution::Uniform { lo, hi } => format!("uniform[{lo},{hi}]"),
            TransmittanceDistribution::TruncatedNormal { mean, std } => format!("normal[{mean},{std}]"),
            TransmittanceDistribution::LogNegativeWeibull(w) => {
                format!("weibull[{},{}]", w.w_over_a, w.sigma_b)
            }
            TransmittanceDistribution::Empirical(e) => format!("empirical[{}]", e.len()),
        }
    }

    fn z_bounds(mean: f64, std: f64) -> (f64, f64) {
        (
            ((0.0 - mean) / std).max(-Z_CLIP),
            ((1.0 - mean) / std).min(Z_CLIP),
        )
    }

    /// Normal mass retained on `[0, 1]` (truncated normal only).
    fn normal_mass(&self) -> f64 {
        match self {
            TransmittanceDistribution::TruncatedNormal { mean, std } => {
                let (a, b) = Self::z_bounds(*mean, *std);
                if a >= b {
                    return 0.0;
                }
                // Use the upper tail when both bounds sit right of the mean.
                if a > 0.0 {
                    norm_cdf(-a) - norm_cdf(-b)
                } else {
                    norm_cdf(b) - norm_cdf(a)
                }
            }
            _ => 1.0,
        }
    }

    /// Probability density at `t ∈ [0, 1]`.
    pub fn density(&self, t: f64) -> Result<f64> {
        check_range("t", t, 0.0, 1.0)?;
        Ok(match self {
            TransmittanceDistribution::Uniform { lo, hi } => {
                if t >= *lo && t <= *hi {
                    1.0 / (hi - lo)
                } else {
                    0.0
                }
            }
            TransmittanceDistribution::TruncatedNormal { mean, std } => {
                norm_pdf((t - mean) / std) / (std * self.normal_mass())
            }
            TransmittanceDistribution::LogNegativeWeibull(w) => w.density(t),
            TransmittanceDistribution::Empirical(e) => e.density(t),
        })
    }

    /// Cumulative distribution function.
    pub fn cdf(&self, t: f64) -> f64 {
        match self {
            TransmittanceDistribution::Uniform { lo, hi } => ((t - lo) / (hi - lo)).clamp(0.0, 1.0),
            TransmittanceDistribution::TruncatedNormal { mean, std } => {
                let (a, _) = Self::z_bounds(*mean, *std);
                let z = ((t.clamp(0.0, 1.0) - mean) / std).max(a);
                ((norm_cdf(z) - norm_cdf(a)) / self.normal_mass()).clamp(0.0, 1.0)
            }
            TransmittanceDistribution::LogNegativeWeibull(w) => w.cdf(t),
            TransmittanceDistribution::Empirical(e) => e.cdf(t),
        }
    }

    /// Inverse CDF for `p ∈ (0, 1]` (left-continuous for empirical traces).
    pub fn quantile(&self, p: f64) -> f64 {
        let p = p.clamp(0.0, 1.0);
        match self {
            TransmittanceDistribution::Uniform { lo, hi } => lo + (hi - lo) * p,
            TransmittanceDistribution::TruncatedNormal { mean, std } => {
                let (a, b) = Self::z_bounds(*mean, *std);
                let z = if a > 0.0 {
                    // Work in the upper tail to keep precision.
                    let (qa, qb) = (norm_cdf(-a), norm_cdf(-b));
                    -norm_quantile(qa - p * (qa - qb))
                } else {
                    let (pa, pb) = (norm_cdf(a), norm_cdf(b));
                    norm_quantile(pa + p * (pb - pa))
                };
                (mean + std * z.clamp(a, b)).clamp(0.0, 1.0)
            }
            TransmittanceDistribution::LogNegativeWeibull(w) => w.quantile(p),
            TransmittanceDistribution::Empirical(e) => e.quantile(p),
        }
    }

    /// Draw `count` i.i.d. transmittances. Identical seeds give identical
    /// sequences regardless of execution strategy.
    pub fn sample(&self, seed: u64, count: usize) -> Result<Vec<f64>> {
        self.sample_with(seed, count, Exec::default())
    }

    pub fn sample_with(&self, seed: u64, count: usize, exec: Exec) -> Result<Vec<f64>> {
        if count == 0 {
            return Err(Error::InvalidParameter("sample count must be at least 1".into()));
        }
        self.validate()?;
        let base = rng::tagged(seed, domain::TRANSMITTANCE);
        let mut out = vec![0.0; count];
        par::fill_chunks(exec, &mut out, SAMPLE_CHUNK, |chunk, slice| {
            let mut rng = rng::stream(base, chunk as u64);
            for x in slice.iter_mut() {
                *x = self.draw(&mut rng);
            }
        });
        Ok(out)
    }

    /// One draw from the law using `rng`.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            TransmittanceDistribution::Empirical(e) => e.draw(rng),
            _ => {
                // (0, 1] keeps the inverse CDFs finite.
                let p = 1.0 - rng.random::<f64>();
                self.quantile(p)
            }
        }
    }

    /// `E[g(T)]` for a vector-valued `g`, by adaptive quadrature (analytic
    /// laws) or direct averaging (empirical traces).
    pub fn expect<const N: usize, G>(&self, g: G) -> Result<[f64; N]>
    where
        G: Fn(f64) -> [f64; N],
    {
        self.expect_with(g, &[], DEFAULT_ABS_TOL)
    }

    /// Like [`expect`](Self::expect), with extra breakpoints (in `T`) where
    /// `g` changes quickly, and an explicit absolute tolerance.
    pub fn expect_with<const N: usize, G>(&self, g: G, t_breaks: &[f64], abs_tol: f64) -> Result<[f64; N]>
    where
        G: Fn(f64) -> [f64; N],
    {
        if let TransmittanceDistribution::Empirical(e) = self {
            return Ok(e.average(g));
        }
        let (a, b) = self.param_range();
        let mut breaks = param_breaks(a, b, t_breaks, |t| self.to_param(t));
        if let Some(x) = self.param_hint() {
            insert_break(&mut breaks, x);
        }
        let q = integrate_breaks(
            |x| {
                let (t, w) = self.at_param(x);
                let mut v = g(t);
                v.iter_mut().for_each(|y| *y *= w);
                v
            },
            &breaks,
            abs_tol,
            "expectation",
        )?;
        Ok(q.value)
    }

    /// A fixed discretisation `[(t_i, w_i)]` with `Σ w_i g(t_i) ≈ E[g(T)]`:
    /// composite 15-point Kronrod rule on `panels` equal pieces of the
    /// integration variable, or the samples themselves for empirical traces.
    pub fn rule(&self, panels: usize) -> Vec<(f64, f64)> {
        if let TransmittanceDistribution::Empirical(e) = self {
            let w = 1.0 / e.len() as f64;
            return e.samples().iter().map(|&t| (t, w)).collect();
        }
        let (a, b) = self.param_range();
        let panels = panels.max(1);
        let mut out = Vec::with_capacity(15 * panels);
        for i in 0..panels {
            let lo = a + (b - a) * i as f64 / panels as f64;
            let hi = a + (b - a) * (i + 1) as f64 / panels as f64;
            for (x, wq) in kronrod_nodes(lo, hi) {
                let (t, w) = self.at_param(x);
                if w > 0.0 {
                    out.push((t, w * wq));
                }
            }
        }
        out
    }

    /// Range of the integration variable (analytic laws only).
    fn param_range(&self) -> (f64, f64) {
        match self {
            TransmittanceDistribution::Uniform { lo, hi } => (lo.sqrt(), hi.sqrt()),
            TransmittanceDistribution::TruncatedNormal { mean, std } => Self::z_bounds(*mean, *std),
            TransmittanceDistribution::LogNegativeWeibull(_) => (0.0, 1.0),
            TransmittanceDistribution::Empirical(_) => (0.0, 1.0),
        }
    }

    /// `T` and the density weight at integration variable `x`.
    fn at_param(&self, x: f64) -> (f64, f64) {
        match self {
            TransmittanceDistribution::Uniform { lo, hi } => (x * x, 2.0 * x / (hi - lo)),
            TransmittanceDistribution::TruncatedNormal { mean, std } => {
                ((mean + std * x).clamp(0.0, 1.0), norm_pdf(x) / self.normal_mass())
            }
            TransmittanceDistribution::LogNegativeWeibull(w) => (w.quantile(x), 1.0),
            TransmittanceDistribution::Empirical(_) => (x, 1.0),
        }
    }

    fn to_param(&self, t: f64) -> f64 {
        match self {
            TransmittanceDistribution::Uniform { .. } => t.max(0.0).sqrt(),
            TransmittanceDistribution::TruncatedNormal { mean, std } => (t - mean) / std,
            TransmittanceDistribution::LogNegativeWeibull(w) => w.cdf(t),
            TransmittanceDistribution::Empirical(_) => t,
        }
    }

    /// Where the integrand is known to change fastest.
    fn param_hint(&self) -> Option<f64> {
        match self {
            // The bulk of the normal sits near z = 0.
            TransmittanceDistribution::TruncatedNormal { .. } => Some(0.0),
            TransmittanceDistribution::LogNegativeWeibull(w) => Some(w.knee_level()),
            _ => None,
        }
    }

    /// Moments `⟨T⟩`, `⟨√T⟩` and `Var(√T)`.
    pub fn moments(&self) -> Result<Moments> {
        self.validate()?;
        let [mean_t, mean_sqrt_t] = self.expect(|t| [t, t.sqrt()])?;
        Ok(Moments::from_means(mean_t, mean_sqrt_t))
    }

    /// `∫ f(t) dt` evaluated through [`density`](Self::density), used to check
    /// normalisation. The log-negative Weibull density is integrated in the
    /// beam-displacement variable where it is smooth.
    pub fn total_mass(&self) -> Result<f64> {
        self.validate()?;
        let dens = |t: f64| self.density(t.clamp(0.0, 1.0)).unwrap_or(0.0);
        match self {
            TransmittanceDistribution::Uniform { lo, hi } => {
                let q = integrate_breaks(|t| [dens(t)], &[*lo, *hi], DEFAULT_ABS_TOL, "uniform mass")?;
                Ok(q.value[0])
            }
            TransmittanceDistribution::TruncatedNormal { mean, std } => {
                let mut breaks = vec![0.0, 1.0];
                if *mean > 0.0 && *mean < 1.0 {
                    breaks.insert(1, *mean);
                }
                // Pad with ±1σ points so narrow peaks are always resolved.
                for k in [-3.0, -1.0, 1.0, 3.0] {
                    let t = mean + k * std;
                    if t > 0.0 && t < 1.0 {
                        insert_break(&mut breaks, t);
                    }
                }
                let q = integrate_breaks(|t| [dens(t)], &breaks, DEFAULT_ABS_TOL, "normal mass")?;
                Ok(q.value[0])
            }
            TransmittanceDistribution::LogNegativeWeibull(w) => w.mass_via_displacement(),
            TransmittanceDistribution::Empirical(e) => e.histogram_mass(),
        }
    }
}

fn insert_break(breaks: &mut Vec<f64>, x: f64) {
    let lo = breaks[0];
    let hi = *breaks.last().expect("non-empty breaks");
    if x > lo && x < hi {
        let pos = breaks.partition_point(|&b| b < x);
        if breaks[pos] != x {
            breaks.insert(pos, x);
        }
    }
}

/// Integration breakpoints in parameter space: four equal pieces plus the
/// mapped images of `t_breaks`.
fn param_breaks(a: f64, b: f64, t_breaks: &[f64], map: impl Fn(f64) -> f64) -> Vec<f64> {
    let mut breaks: Vec<f64> = (0..=4).map(|i| a + (b - a) * i as f64 / 4.0).collect();
    breaks[4] = b;
    for &t in t_breaks {
        if t.is_finite() {
            let x = map(t);
            if x.is_finite() {
                insert_break(&mut breaks, x);
            }
        }
    }
    breaks
}
