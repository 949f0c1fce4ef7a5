//! Measured transmittance traces.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Bin width used when a trace has no spread.
const POINT_MASS_WIDTH: f64 = 1e-3;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct EmpiricalRepr {
    samples: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bin_width: Option<f64>,
}

/// Empirical law: expectations average over the trace, the density is a
/// histogram (Freedman–Diaconis width unless overridden).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "EmpiricalRepr", into = "EmpiricalRepr")]
pub struct Empirical {
    samples: Vec<f64>,
    bin_width: Option<f64>,
    sorted: Vec<f64>,
    hist_lo: f64,
    hist_width: f64,
    counts: Vec<u64>,
}

impl TryFrom<EmpiricalRepr> for Empirical {
    type Error = Error;

    fn try_from(r: EmpiricalRepr) -> Result<Self> {
        Empirical::new(r.samples, r.bin_width)
    }
}

impl From<Empirical> for EmpiricalRepr {
    fn from(e: Empirical) -> Self {
        EmpiricalRepr {
            samples: e.samples,
            bin_width: e.bin_width,
        }
    }
}

fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    // Linear interpolation between order statistics.
    let pos = q * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 < sorted.len() {
        sorted[i] + frac * (sorted[i + 1] - sorted[i])
    } else {
        sorted[i]
    }
}

impl Empirical {
    pub fn new(samples: Vec<f64>, bin_width: Option<f64>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InsufficientData { needed: 1, got: 0 });
        }
        if let Some((i, &t)) = samples
            .iter()
            .enumerate()
            .find(|(_, t)| !(t.is_finite() && (0.0..=1.0).contains(*t)))
        {
            return Err(Error::InvalidParameter(format!(
                "trace sample {i} = {t} lies outside [0, 1]"
            )));
        }
        if let Some(w) = bin_width {
            if !(w.is_finite() && w > 0.0) {
                return Err(Error::InvalidParameter(format!("bin width must be positive (got {w})")));
            }
        }
        let mut sorted = samples.clone();
        sorted.sort_by(f64::total_cmp);
        let (min, max) = (sorted[0], sorted[sorted.len() - 1]);
        let n = sorted.len() as f64;

        let (hist_lo, hist_width, nbins) = if max > min {
            let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
            let fd = 2.0 * iqr * n.powf(-1.0 / 3.0);
            let w = bin_width.unwrap_or(if fd > 0.0 { fd } else { (max - min) / n.sqrt().ceil() });
            let nbins = ((max - min) / w).ceil().max(1.0) as usize;
            (min, (max - min) / nbins as f64, nbins)
        } else {
            let w = bin_width.unwrap_or(POINT_MASS_WIDTH);
            ((min - 0.5 * w).max(0.0).min(1.0 - w), w, 1)
        };

        let mut counts = vec![0u64; nbins];
        for &t in &sorted {
            let b = (((t - hist_lo) / hist_width) as usize).min(nbins - 1);
            counts[b] += 1;
        }
        Ok(Empirical {
            samples,
            bin_width,
            sorted,
            hist_lo,
            hist_width,
            counts,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples.is_empty() {
            return Err(Error::InsufficientData { needed: 1, got: 0 });
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    /// Histogram bin width actually used.
    pub fn hist_width(&self) -> f64 {
        self.hist_width
    }

    pub fn density(&self, t: f64) -> f64 {
        let x = (t - self.hist_lo) / self.hist_width;
        if x < 0.0 || x > self.counts.len() as f64 {
            return 0.0;
        }
        let b = (x as usize).min(self.counts.len() - 1);
        self.counts[b] as f64 / (self.samples.len() as f64 * self.hist_width)
    }

    pub fn cdf(&self, t: f64) -> f64 {
        self.sorted.partition_point(|&s| s <= t) as f64 / self.sorted.len() as f64
    }

    pub fn quantile(&self, p: f64) -> f64 {
        let n = self.sorted.len();
        let i = ((p * n as f64).ceil() as usize).clamp(1, n) - 1;
        self.sorted[i]
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.samples[rng.random_range(0..self.samples.len())]
    }

    pub fn average<const N: usize, G: Fn(f64) -> [f64; N]>(&self, g: G) -> [f64; N] {
        let mut acc = [0.0; N];
        for &t in &self.samples {
            let v = g(t);
            for i in 0..N {
                acc[i] += v[i];
            }
        }
        let n = self.samples.len() as f64;
        acc.iter_mut().for_each(|x| *x /= n);
        acc
    }

    pub(crate) fn histogram_mass(&self) -> Result<f64> {
        let n = self.samples.len() as f64;
        Ok(self.counts.iter().map(|&c| c as f64 / (n * self.hist_width) * self.hist_width).sum())
    }
}
