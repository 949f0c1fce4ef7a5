//! Quadrature transmission through a fading channel.
//!
//! Bob's quadrature is `B = √T·M + N` with `M ~ N(0, V)` and the merged
//! noise `N ~ N(0, V_N)`, `V_N = 1 + ε − T(1 − V_S)`. The transmittance is
//! constant within a package and drawn i.i.d. across packages.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::distributions::TransmittanceDistribution;
use crate::error::{check_range, Error, Result};
use crate::par::{self, Exec};
use crate::rng::{self, domain};

/// Trusted-party protocol parameters (variances in shot-noise units).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProtocolParams {
    /// Modulation variance `V`.
    pub v: f64,
    /// Signal-state quadrature variance `V_S` (1 for coherent states).
    pub v_s: f64,
    /// Channel excess noise `ε`.
    pub eps: f64,
    /// Reconciliation efficiency `β`.
    pub beta: f64,
    /// Fraction of each package disclosed for estimation.
    pub r: f64,
    /// Parameter-estimation failure probability. Reported only; bounds use `z_conf`.
    pub eps_pe: f64,
    /// Smoothing parameter entering the finite-size penalty.
    pub eps_bar: f64,
    /// Confidence multiplier for parameter bounds.
    pub z_conf: f64,
}

impl Default for ProtocolParams {
    fn default() -> Self {
        ProtocolParams {
            v: 5.0,
            v_s: 0.1,
            eps: 0.01,
            beta: 0.95,
            r: 0.2,
            eps_pe: 1e-10,
            eps_bar: 1e-10,
            z_conf: 2.0,
        }
    }
}

impl ProtocolParams {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, x: f64| {
            if x.is_finite() && x > 0.0 {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!("{name} must be positive (got {x})")))
            }
        };
        positive("V", self.v)?;
        positive("V_S", self.v_s)?;
        positive("z_conf", self.z_conf)?;
        check_range("eps", self.eps, 0.0, f64::MAX)?;
        check_range("beta", self.beta, 0.0, 1.0)?;
        check_range("eps_pe", self.eps_pe, 0.0, 1.0)?;
        if !(self.r > 0.0 && self.r < 1.0) {
            return Err(Error::InvalidParameter(format!("r must lie in (0, 1) (got {})", self.r)));
        }
        if !(self.eps_bar > 0.0 && self.eps_bar < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "eps_bar must lie in (0, 1) (got {})",
                self.eps_bar
            )));
        }
        Ok(())
    }

    /// `V′ = V + V_S − 1`.
    pub fn v_prime(&self) -> f64 {
        self.v + self.v_s - 1.0
    }

    /// Merged noise variance `V_N` at transmittance `t`.
    pub fn noise_variance(&self, t: f64) -> f64 {
        1.0 + self.eps - t * (1.0 - self.v_s)
    }

    /// Disclosed pairs per package of `n` states, `round(r·n)`.
    pub fn disclosed(&self, n: usize) -> usize {
        (self.r * n as f64).round() as usize
    }
}

/// `n` quadrature pairs sharing one transmittance.
#[derive(Debug, Clone, PartialEq)]
pub struct Package {
    pub true_t: f64,
    pub m: Vec<f64>,
    pub b: Vec<f64>,
}

impl Package {
    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// The first `k` pairs, used for estimation.
    pub fn disclosed(&self, k: usize) -> (&[f64], &[f64]) {
        let k = k.min(self.len());
        (&self.m[..k], &self.b[..k])
    }
}

/// A sequence of packages generated from one fading law.
#[derive(Debug, Clone, PartialEq)]
pub struct Run {
    pub packages: Vec<Package>,
    pub dist: TransmittanceDistribution,
    pub protocol: ProtocolParams,
    pub seed: u64,
    pub n: usize,
}

impl Run {
    pub fn true_t(&self) -> Vec<f64> {
        self.packages.iter().map(|p| p.true_t).collect()
    }

    pub fn states(&self) -> usize {
        self.n * self.packages.len()
    }
}

/// One package at fixed transmittance `t`.
pub fn simulate_package(t: f64, protocol: &ProtocolParams, n: usize, seed: u64) -> Result<Package> {
    check_range("T", t, 0.0, 1.0)?;
    protocol.validate()?;
    if n < 2 {
        return Err(Error::InsufficientData { needed: 2, got: n });
    }
    let mut rng = rng::stream(seed, 0);
    let sv = protocol.v.sqrt();
    let st = t.sqrt();
    let sn = protocol.noise_variance(t).sqrt();
    let mut m = Vec::with_capacity(n);
    let mut b = Vec::with_capacity(n);
    for _ in 0..n {
        let zm: f64 = StandardNormal.sample(&mut rng);
        let zn: f64 = StandardNormal.sample(&mut rng);
        let x = sv * zm;
        m.push(x);
        b.push(st * x + sn * zn);
    }
    Ok(Package { true_t: t, m, b })
}

/// Seed of package `index` within a run seeded by `seed`.
pub fn package_seed(seed: u64, index: usize) -> u64 {
    rng::derive_seed(rng::tagged(seed, domain::PACKAGE), index as u64)
}

pub fn simulate_run(
    dist: &TransmittanceDistribution,
    protocol: &ProtocolParams,
    n: usize,
    m: usize,
    seed: u64,
) -> Result<Run> {
    simulate_run_with(dist, protocol, n, m, seed, Exec::default())
}

pub fn simulate_run_with(
    dist: &TransmittanceDistribution,
    protocol: &ProtocolParams,
    n: usize,
    m: usize,
    seed: u64,
    exec: Exec,
) -> Result<Run> {
    if m < 1 {
        return Err(Error::InsufficientData { needed: 1, got: m });
    }
    let ts = dist.sample_with(seed, m, exec)?;
    let packages = par::map_range(exec, m, |i| simulate_package(ts[i], protocol, n, package_seed(seed, i)))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(Run {
        packages,
        dist: dist.clone(),
        protocol: *protocol,
        seed,
        n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_inputs() {
        let p = ProtocolParams::default();
        assert!(simulate_package(1.1, &p, 10, 0).is_err());
        assert!(simulate_package(0.5, &p, 1, 0).is_err());
        let bad = ProtocolParams { r: 1.0, ..p };
        assert!(simulate_package(0.5, &bad, 10, 0).is_err());
    }

    #[test]
    fn package_is_deterministic() {
        let p = ProtocolParams::default();
        let a = simulate_package(0.4, &p, 50, 9).unwrap();
        let b = simulate_package(0.4, &p, 50, 9).unwrap();
        let c = simulate_package(0.4, &p, 50, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn zero_transmittance_decorrelates() {
        let p = ProtocolParams { v: 10.0, ..Default::default() };
        let n = 100_000;
        let pk = simulate_package(0.0, &p, n, 1).unwrap();
        let cov: f64 = pk.m.iter().zip(&pk.b).map(|(m, b)| m * b).sum::<f64>() / n as f64;
        // sd of the sample covariance is √(V·V_N/n)
        let sd = (p.v * p.noise_variance(0.0) / n as f64).sqrt();
        assert!(cov.abs() < 4.0 * sd, "{cov}");
    }

    #[test]
    fn run_with_point_mass() {
        let d = TransmittanceDistribution::empirical(vec![0.8]).unwrap();
        let run = simulate_run(&d, &ProtocolParams::default(), 4, 3, 5).unwrap();
        assert_eq!(run.true_t(), vec![0.8; 3]);
        assert_eq!(run.states(), 12);
    }
}
