//! Per-package channel estimation and worst-case effective parameters.
//!
//! Each package discloses `k` pairs `(M_j, B_j)`. From them we estimate
//! `√T`, `T = (√T)²` and the residual noise `V_N`, together with their
//! predicted standard errors. Across packages the estimates are combined in
//! the rotated variables `X1 = ⟨T⟩ − ⟨√T⟩²` and `X2 = ⟨T⟩ + ⟨√T⟩²`, whose
//! confidence bounds give a lower bound on `T_eff = ⟨√T⟩²` and an upper bound
//! on `ε_eff = ε + Var(√T)·V′`.
//!
//! Package-level estimator noise inflates the spread of `T̂_i`: on average
//! `T̂_i` exceeds `T_i` by `Var(√T̂_i)`. [`AggregateStats`] keeps both the
//! corrected moments and this noise floor; [`NoiseFloor`] selects which one
//! the bounds use.

use serde::{Deserialize, Serialize};

use crate::channel::{Package, ProtocolParams, Run};
use crate::error::{Error, Result};
use crate::par::{self, Exec};

/// Estimates from the disclosed part of one package.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PackageEstimate {
    pub sqrt_t_hat: f64,
    pub t_hat: f64,
    pub sigma_sqrt_t: f64,
    pub sigma_t: f64,
    pub vn_hat: f64,
    pub eps_hat: f64,
    pub k: usize,
}

impl PackageEstimate {
    /// `√T̂ < 0` only happens through noise or a sign flip in the data.
    pub fn sign_anomaly(&self) -> bool {
        self.sqrt_t_hat < 0.0
    }
}

fn check_pairs(m: &[f64], b: &[f64]) -> Result<usize> {
    if m.len() != b.len() {
        return Err(Error::InvalidParameter(format!(
            "M and B lengths differ ({} vs {})",
            m.len(),
            b.len()
        )));
    }
    if m.len() < 2 {
        return Err(Error::InsufficientData { needed: 2, got: m.len() });
    }
    Ok(m.len())
}

fn check_v(v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("V must be positive (got {v})")))
    }
}

/// `(√T̂, v̂_N)` from the sample cross moment and the fit residuals.
fn fit(m: &[f64], b: &[f64], v: f64) -> Result<(f64, f64)> {
    let k = check_pairs(m, b)?;
    check_v(v)?;
    let cross: f64 = m.iter().zip(b).map(|(x, y)| x * y).sum();
    let s = cross / (v * k as f64);
    let rss: f64 = m.iter().zip(b).map(|(x, y)| (y - s * x).powi(2)).sum();
    Ok((s, rss / (k - 1) as f64))
}

fn sqrt_t_variance(t: f64, vn: f64, v: f64, k: f64) -> f64 {
    (2.0 * t + vn / v) / k
}

fn positive_sd(var: f64) -> f64 {
    var.max(f64::MIN_POSITIVE).sqrt()
}

/// `(√T̂, σ(√T̂))` with `√T̂ = ΣM_jB_j / (V·k)`.
pub fn estimate_sqrt_t(m: &[f64], b: &[f64], v: f64) -> Result<(f64, f64)> {
    let (s, vn) = fit(m, b, v)?;
    Ok((s, positive_sd(sqrt_t_variance(s * s, vn, v, m.len() as f64))))
}

/// `(T̂, σ(T̂))` with `T̂ = (√T̂)²`.
pub fn estimate_t(m: &[f64], b: &[f64], v: f64) -> Result<(f64, f64)> {
    let (s, vn) = fit(m, b, v)?;
    let t = s * s;
    let k = m.len() as f64;
    Ok((t, positive_sd(4.0 / k * (2.0 * t * t + t * vn / v))))
}

/// `(v̂_N, ε̂)` from the residual variance.
pub fn estimate_noise(m: &[f64], b: &[f64], v: f64, v_s: f64) -> Result<(f64, f64)> {
    let (s, vn) = fit(m, b, v)?;
    Ok((vn, vn - 1.0 + s * s * (1.0 - v_s)))
}

/// All estimates from the pairs `(m, b)`.
pub fn estimate_pairs(m: &[f64], b: &[f64], protocol: &ProtocolParams) -> Result<PackageEstimate> {
    let (s, vn) = fit(m, b, protocol.v)?;
    let k = m.len();
    let kf = k as f64;
    let t = s * s;
    let eps_hat = vn - 1.0 + t * (1.0 - protocol.v_s);
    let var_t = 4.0 / kf * (2.0 * t * t + t * vn / protocol.v);
    let sd_eps = (2.0 * vn * vn / kf + var_t * (1.0 - protocol.v_s).powi(2)).sqrt();
    if eps_hat < -4.0 * sd_eps {
        log::warn!("estimated excess noise {eps_hat:.4} is implausibly negative (k = {k})");
    }
    Ok(PackageEstimate {
        sqrt_t_hat: s,
        t_hat: t,
        sigma_sqrt_t: positive_sd(sqrt_t_variance(t, vn, protocol.v, kf)),
        sigma_t: positive_sd(var_t),
        vn_hat: vn,
        eps_hat,
        k,
    })
}

/// Estimate a package from its first `round(r·n)` pairs.
pub fn estimate_package(package: &Package, protocol: &ProtocolParams) -> Result<PackageEstimate> {
    let k = protocol.disclosed(package.len());
    let (m, b) = package.disclosed(k);
    estimate_pairs(m, b, protocol)
}

pub fn estimate_run(run: &Run, exec: Exec) -> Result<Vec<PackageEstimate>> {
    par::map_slice(exec, &run.packages, |p| estimate_package(p, &run.protocol))
        .into_iter()
        .collect()
}

/// Which version of the aggregated fluctuation feeds the bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseFloor {
    /// Use the raw spread of the estimates, so `Var(√T)` includes the
    /// package-level estimator noise.
    #[default]
    Retain,
    /// Subtract the predicted estimator noise.
    Subtract,
}

/// Moments of the package estimates and their standard errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregateStats {
    pub m_used: f64,
    pub mean_sqrt_t_hat: f64,
    /// Raw mean of `T̂_i`.
    pub mean_t_hat: f64,
    /// Mean predicted `Var(√T̂_i)`.
    pub noise_floor: f64,
    /// `X1`, `X2` with the noise floor removed.
    pub x1_hat: f64,
    pub x2_hat: f64,
    pub se_x1: f64,
    pub se_x2: f64,
    /// Standard errors of the raw (floor-retaining) `X1`, `X2`.
    pub se_x1_raw: f64,
    pub se_x2_raw: f64,
    pub se_mean_t: f64,
    pub se_mean_t_raw: f64,
    pub se_mean_sqrt_t: f64,
    pub eps_hat: f64,
    pub vn_hat: f64,
    /// Total disclosed pairs behind the noise estimate.
    pub k_total: f64,
}

impl AggregateStats {
    pub fn x1(&self, floor: NoiseFloor) -> f64 {
        match floor {
            NoiseFloor::Retain => self.x1_hat + self.noise_floor,
            NoiseFloor::Subtract => self.x1_hat,
        }
    }

    pub fn x2(&self, floor: NoiseFloor) -> f64 {
        match floor {
            NoiseFloor::Retain => self.x2_hat + self.noise_floor,
            NoiseFloor::Subtract => self.x2_hat,
        }
    }

    pub fn se_x1(&self, floor: NoiseFloor) -> f64 {
        match floor {
            NoiseFloor::Retain => self.se_x1_raw,
            NoiseFloor::Subtract => self.se_x1,
        }
    }

    pub fn se_x2(&self, floor: NoiseFloor) -> f64 {
        match floor {
            NoiseFloor::Retain => self.se_x2_raw,
            NoiseFloor::Subtract => self.se_x2,
        }
    }

    pub fn mean_t(&self, floor: NoiseFloor) -> f64 {
        match floor {
            NoiseFloor::Retain => self.mean_t_hat,
            NoiseFloor::Subtract => self.mean_t_hat - self.noise_floor,
        }
    }

    pub fn se_mean_t(&self, floor: NoiseFloor) -> f64 {
        match floor {
            NoiseFloor::Retain => self.se_mean_t_raw,
            NoiseFloor::Subtract => self.se_mean_t,
        }
    }

    /// Upper confidence bound on the raw excess noise, pooled over all
    /// disclosed pairs: `max(ε̂, 0) + z·v̂_N·√(2/k_total)`.
    pub fn eps_upper_bound(&self, z_conf: f64) -> f64 {
        self.eps_hat.max(0.0) + z_conf * self.vn_hat * (2.0 / self.k_total).sqrt()
    }
}

fn mean_and_se(xs: impl Iterator<Item = f64> + Clone, m: f64) -> (f64, f64) {
    let mean = xs.clone().sum::<f64>() / m;
    let var = xs.map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1.0);
    (mean, (var / m).sqrt())
}

/// Combine package estimates. Standard errors are empirical spreads of the
/// package-level contributions divided by `√m`.
pub fn aggregate(estimates: &[PackageEstimate]) -> Result<AggregateStats> {
    if estimates.len() < 2 {
        return Err(Error::InsufficientData { needed: 2, got: estimates.len() });
    }
    let m = estimates.len() as f64;
    let it = || estimates.iter();

    let (mu, se_b) = mean_and_se(it().map(|e| e.sqrt_t_hat), m);
    let (mean_t_hat, se_t_raw) = mean_and_se(it().map(|e| e.t_hat), m);
    let (noise_floor, _) = mean_and_se(it().map(|e| e.sigma_sqrt_t.powi(2)), m);
    let (_, se_t) = mean_and_se(it().map(|e| e.t_hat - e.sigma_sqrt_t.powi(2)), m);
    let (_, se1_raw) = mean_and_se(it().map(|e| (e.sqrt_t_hat - mu).powi(2)), m);
    let (_, se2_raw) = mean_and_se(it().map(|e| (e.sqrt_t_hat + mu).powi(2)), m);
    let (_, se1) = mean_and_se(it().map(|e| (e.sqrt_t_hat - mu).powi(2) - e.sigma_sqrt_t.powi(2)), m);
    let (_, se2) = mean_and_se(it().map(|e| (e.sqrt_t_hat + mu).powi(2) - e.sigma_sqrt_t.powi(2)), m);
    let (eps_hat, _) = mean_and_se(it().map(|e| e.eps_hat), m);
    let (vn_hat, _) = mean_and_se(it().map(|e| e.vn_hat), m);

    let mean_t = mean_t_hat - noise_floor;
    Ok(AggregateStats {
        m_used: m,
        mean_sqrt_t_hat: mu,
        mean_t_hat,
        noise_floor,
        x1_hat: mean_t - mu * mu,
        x2_hat: mean_t + mu * mu,
        se_x1: se1,
        se_x2: se2,
        se_x1_raw: se1_raw,
        se_x2_raw: se2_raw,
        se_mean_t: se_t,
        se_mean_t_raw: se_t_raw,
        se_mean_sqrt_t: se_b,
        eps_hat,
        vn_hat,
        k_total: it().map(|e| e.k as f64).sum(),
    })
}

/// How a [`WorstCaseChannel`] was bounded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundMethod {
    Rotated,
    Rectangular,
}

/// Pessimistic effective channel and the bounds behind it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorstCaseChannel {
    pub t_eff_low: f64,
    pub eps_eff_up: f64,
    pub x1_up: f64,
    pub x2_low: f64,
    pub eps_up: f64,
    /// Upper bound used for `Var(√T)`.
    pub var_sqrt_t_up: f64,
    /// The lower bound on `T_eff` crossed zero and was clamped.
    pub unusable: bool,
    pub method: BoundMethod,
}

fn check_z(z_conf: f64) -> Result<()> {
    if z_conf.is_finite() && z_conf > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("z_conf must be positive (got {z_conf})")))
    }
}

fn finish(x1_up: f64, x2_low: f64, eps_up: f64, v_prime: f64, method: BoundMethod) -> WorstCaseChannel {
    let t = 0.5 * (x2_low - x1_up);
    WorstCaseChannel {
        t_eff_low: t.clamp(0.0, 1.0),
        eps_eff_up: eps_up + x1_up * v_prime,
        x1_up,
        x2_low,
        eps_up,
        var_sqrt_t_up: x1_up,
        unusable: t <= 0.0,
        method,
    }
}

/// Bounds from the rotated variables: `X1^UP = X1 + z·se(X1)` (floored at 0),
/// `X2^LOW = X2 − z·se(X2)`, `T_eff^LOW = (X2^LOW − X1^UP)/2` and
/// `ε_eff^UP = ε^UP + X1^UP·V′`.
pub fn worst_case(stats: &AggregateStats, eps_up: f64, v_prime: f64, z_conf: f64) -> Result<WorstCaseChannel> {
    worst_case_with(stats, eps_up, v_prime, z_conf, NoiseFloor::default())
}

pub fn worst_case_with(
    stats: &AggregateStats,
    eps_up: f64,
    v_prime: f64,
    z_conf: f64,
    floor: NoiseFloor,
) -> Result<WorstCaseChannel> {
    check_z(z_conf)?;
    let x1_up = (stats.x1(floor) + z_conf * stats.se_x1(floor)).max(0.0);
    let x2_low = stats.x2(floor) - z_conf * stats.se_x2(floor);
    Ok(finish(x1_up, x2_low, eps_up, v_prime, BoundMethod::Rotated))
}

/// Baseline bounds from separate intervals on `⟨T⟩` and `⟨√T⟩`:
/// `Var(√T)^UP = ⟨T⟩^UP − (⟨√T⟩^LOW)²` and `T_eff^LOW = (⟨√T⟩^LOW)²`.
pub fn worst_case_rectangular(
    stats: &AggregateStats,
    eps_up: f64,
    v_prime: f64,
    z_conf: f64,
) -> Result<WorstCaseChannel> {
    worst_case_rectangular_with(stats, eps_up, v_prime, z_conf, NoiseFloor::default())
}

pub fn worst_case_rectangular_with(
    stats: &AggregateStats,
    eps_up: f64,
    v_prime: f64,
    z_conf: f64,
    floor: NoiseFloor,
) -> Result<WorstCaseChannel> {
    check_z(z_conf)?;
    let t_up = stats.mean_t(floor) + z_conf * stats.se_mean_t(floor);
    let s_low = stats.mean_sqrt_t_hat - z_conf * stats.se_mean_sqrt_t;
    let x1_up = (t_up - s_low * s_low).max(0.0);
    let t_low = if s_low > 0.0 { s_low * s_low } else { -s_low * s_low };
    Ok(finish(x1_up, x1_up + 2.0 * t_low, eps_up, v_prime, BoundMethod::Rectangular))
}
