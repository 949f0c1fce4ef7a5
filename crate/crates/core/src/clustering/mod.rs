//! Clusterization of packages by their estimated transmittance.
//!
//! Packages are grouped by `T̂` and every group is analysed as its own
//! fading channel. For an analytic fading law `f`, the actual transmittance
//! of packages whose estimate falls in `(lo, hi]` follows
//!
//! ```text
//! p(s) ∝ f(s) · [Φ((hi − s)/σ(s)) − Φ((lo − s)/σ(s))],
//! σ(s)² = (4/k)·(2s² + s·V_N(s)/V),
//! ```
//!
//! and the statistics the estimator would report for that group follow from
//! `p` by quadrature. A layout may also discard every package below a lower
//! cutoff; those packages carry no key.

mod optimize;

pub use optimize::{optimize, GridMeta, OptimizeOptions};

use serde::{Deserialize, Serialize};

use crate::channel::ProtocolParams;
use crate::distributions::{Moments, TransmittanceDistribution};
use crate::error::{Error, Result};
use crate::estimation::{self, AggregateStats, NoiseFloor, PackageEstimate, WorstCaseChannel};
use crate::security::{self, KeyRateReport};
use crate::special::norm_cdf;

const MASS_TOL: f64 = 1e-10;
const SPREAD_TOL: f64 = 1e-11;
/// Clusters below this share of packages are reported as marginal.
const LOW_MASS: f64 = 0.01;

/// Half-open interval `(lo, hi]` on the `T̂` axis; `None` is unbounded.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: Option<f64>,
    pub hi: Option<f64>,
}

impl Interval {
    pub const ALL: Interval = Interval { lo: None, hi: None };

    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::InvalidParameter(format!("interval needs lo < hi (got {lo}, {hi})")));
        }
        Ok(Interval { lo: Some(lo), hi: Some(hi) })
    }

    pub fn contains(&self, t: f64) -> bool {
        self.lo.is_none_or(|lo| t > lo) && self.hi.is_none_or(|hi| t <= hi)
    }

    fn edges(&self) -> impl Iterator<Item = f64> {
        self.lo.into_iter().chain(self.hi)
    }
}

/// Normal model of `T̂` around the actual transmittance `s` for `k`
/// disclosed pairs.
#[derive(Debug, Clone, Copy)]
pub struct EstimateNoise {
    k: f64,
    v: f64,
    eps: f64,
    v_s: f64,
}

impl EstimateNoise {
    pub fn new(k: f64, p: &ProtocolParams) -> Result<Self> {
        if !(k >= 2.0) {
            return Err(Error::InsufficientData { needed: 2, got: k.max(0.0) as usize });
        }
        Ok(EstimateNoise { k, v: p.v, eps: p.eps, v_s: p.v_s })
    }

    fn vn(&self, s: f64) -> f64 {
        1.0 + self.eps - s * (1.0 - self.v_s)
    }

    /// Mean of the residual variance estimate. Residuals are taken against
    /// `√T̂` rather than the least-squares slope, which adds `2sV/(k − 1)`.
    fn vn_hat_mean(&self, s: f64) -> f64 {
        self.vn(s) + 2.0 * s * self.v / (self.k - 1.0)
    }

    /// Mean of `ε̂ = v̂_N − 1 + T̂(1 − V_S)` with `E[T̂] = s + φ(s)`.
    fn eps_hat_mean(&self, s: f64) -> f64 {
        self.vn_hat_mean(s) - 1.0 + (s + self.phi(s)) * (1.0 - self.v_s)
    }

    /// Predicted `Var(√T̂)` at actual transmittance `s`.
    pub fn phi(&self, s: f64) -> f64 {
        (2.0 * s + self.vn(s) / self.v) / self.k
    }

    /// Predicted standard deviation of `T̂`.
    pub fn sigma_t(&self, s: f64) -> f64 {
        (4.0 * s * self.phi(s)).max(0.0).sqrt()
    }

    /// `P(T̂ ≤ t | s)`.
    pub fn cdf(&self, t: f64, s: f64) -> f64 {
        let sd = self.sigma_t(s);
        if sd > 0.0 {
            norm_cdf((t - s) / sd)
        } else if t >= s {
            1.0
        } else {
            0.0
        }
    }

    /// `P(T̂ ∈ interval | s)`.
    pub fn window(&self, iv: &Interval, s: f64) -> f64 {
        let hi = iv.hi.map_or(1.0, |h| self.cdf(h, s));
        let lo = iv.lo.map_or(0.0, |l| self.cdf(l, s));
        (hi - lo).max(0.0)
    }

    /// Breakpoints in `T` around the interval edges, where the window moves.
    fn breaks(&self, iv: &Interval) -> Vec<f64> {
        let mut out = Vec::new();
        for e in iv.edges() {
            let sd = self.sigma_t(e.clamp(0.0, 1.0));
            for c in [-5.0, -2.0, 0.0, 2.0, 5.0] {
                out.push(e + c * sd);
            }
        }
        out
    }
}

/// Marginal CDF of `T̂`, `F(t) = E_f[P(T̂ ≤ t | T)]`.
pub fn estimate_cdf(f: &TransmittanceDistribution, noise: &EstimateNoise, t: f64) -> Result<f64> {
    let iv = Interval { lo: None, hi: Some(t) };
    let [v] = f.expect_with(|s| [noise.cdf(t, s)], &noise.breaks(&iv), MASS_TOL)?;
    Ok(v.clamp(0.0, 1.0))
}

/// Conditional law of the actual transmittance given `T̂ ∈ interval`.
#[derive(Debug, Clone)]
pub struct ConditionalPdf<'a> {
    dist: &'a TransmittanceDistribution,
    noise: EstimateNoise,
    interval: Interval,
    mass: f64,
}

impl ConditionalPdf<'_> {
    /// `P(T̂ ∈ interval)`.
    pub fn mass(&self) -> f64 {
        self.mass
    }

    pub fn interval(&self) -> Interval {
        self.interval
    }

    pub fn density(&self, s: f64) -> Result<f64> {
        Ok(self.dist.density(s)? * self.noise.window(&self.interval, s) / self.mass)
    }

    pub fn moments(&self) -> Result<Moments> {
        let [a, b] = self.dist.expect_with(
            |s| {
                let w = self.noise.window(&self.interval, s);
                [w * s, w * s.sqrt()]
            },
            &self.noise.breaks(&self.interval),
            MASS_TOL,
        )?;
        Ok(Moments::from_means(a / self.mass, b / self.mass))
    }
}

/// The conditional law `p(s)` for packages whose estimate lands in
/// `interval`, with `k` disclosed pairs per package.
pub fn conditional_pdf<'a>(
    f: &'a TransmittanceDistribution,
    interval: Interval,
    k: f64,
    p: &ProtocolParams,
) -> Result<ConditionalPdf<'a>> {
    let noise = EstimateNoise::new(k, p)?;
    let [mass] = f.expect_with(|s| [noise.window(&interval, s)], &noise.breaks(&interval), MASS_TOL)?;
    if !(mass > 1e-14) {
        return Err(Error::EmptyCluster { lo: interval.lo, hi: interval.hi });
    }
    Ok(ConditionalPdf { dist: f, noise, interval, mass })
}

/// Quality flags attached to a cluster.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterFlag {
    /// No packages land in the interval.
    Empty,
    /// Fewer than two packages; no bounds can be formed.
    TooSmall,
    /// Below the configured minimum share.
    BelowMinMass,
    /// Less than 1% of packages.
    LowMass,
    /// The worst-case transmittance bound collapsed to zero.
    Unusable,
}

/// One cluster of a [`ClusterPlan`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub interval: Interval,
    /// Share of packages whose estimate lands in the interval.
    pub mass: f64,
    pub cond_moments: Option<Moments>,
    pub stats: Option<AggregateStats>,
    pub wc: Option<WorstCaseChannel>,
    /// States in the cluster.
    pub n_c: f64,
    /// Operational key rate within the cluster (bits per state, ≥ 0).
    pub k_c: f64,
    pub rate: Option<KeyRateReport>,
    pub flags: Vec<ClusterFlag>,
}

/// Predicted aggregate statistics of the packages in a cluster.
///
/// `√T̂` is modelled as `N(√s, φ(s))` given the actual value `s`, which
/// gives closed forms for the spread of the package-level contributions.
fn model_stats(
    f: &TransmittanceDistribution,
    noise: &EstimateNoise,
    iv: &Interval,
    mass: f64,
    m: f64,
) -> Result<(Moments, AggregateStats)> {
    let breaks = noise.breaks(iv);
    let all = iv.lo.is_none() && iv.hi.is_none();
    let win = |s: f64| if all { 1.0 } else { noise.window(iv, s) };

    let [w0, w1, w2] = f.expect_with(
        |s| {
            let w = win(s);
            [w, w * s, w * s.sqrt()]
        },
        &breaks,
        MASS_TOL,
    )?;
    if !(w0 > 1e-14) {
        return Err(Error::EmptyCluster { lo: iv.lo, hi: iv.hi });
    }
    let mean_t = w1 / w0;
    let mu = w2 / w0;

    let e = f.expect_with(
        |s| {
            let w = win(s);
            let phi = noise.phi(s);
            let u = s.sqrt();
            let d2 = (u - mu).powi(2);
            let e2 = (u + mu).powi(2);
            [
                w * phi,
                w * phi * phi,
                w * s * phi,
                w * (s - mean_t).powi(2),
                w * (s + phi - mean_t).powi(2),
                w * d2 * phi,
                w * d2 * d2,
                w * (d2 + phi).powi(2),
                w * e2 * phi,
                w * e2 * e2,
                w * (e2 + phi).powi(2),
                w * e2,
                w * noise.vn_hat_mean(s),
                w * noise.eps_hat_mean(s),
            ]
        },
        &breaks,
        SPREAD_TOL,
    )?;
    let e: Vec<f64> = e.iter().map(|x| x / w0).collect();
    let (floor, phi2, sphi, var_s) = (e[0], e[1], e[2], e[3]);
    let mom = Moments::from_means(mean_t, mu);
    let var_u = mom.var_sqrt_t;

    // E over s of the within-package variance plus the spread of the
    // conditional mean.
    let var_t_hat = 4.0 * sphi + 2.0 * phi2;
    let d2_mean = var_u;
    let e2_mean = e[11];
    let var_y1 = 4.0 * e[5] + 2.0 * phi2 + (e[6] - d2_mean * d2_mean).max(0.0);
    let var_y1_raw = 4.0 * e[5] + 2.0 * phi2 + (e[7] - (d2_mean + floor).powi(2)).max(0.0);
    let var_y2 = 4.0 * e[8] + 2.0 * phi2 + (e[9] - e2_mean * e2_mean).max(0.0);
    let var_y2_raw = 4.0 * e[8] + 2.0 * phi2 + (e[10] - (e2_mean + floor).powi(2)).max(0.0);
    let var_t_raw = var_t_hat + (e[4] - floor * floor).max(0.0);
    let var_t = var_t_hat + var_s;
    let var_b = floor + var_u;

    let m_c = mass * m;
    let se = |v: f64| (v / m_c).sqrt();
    let stats = AggregateStats {
        m_used: m_c,
        mean_sqrt_t_hat: mu,
        mean_t_hat: mean_t + floor,
        noise_floor: floor,
        x1_hat: var_u,
        x2_hat: mean_t + mu * mu,
        se_x1: se(var_y1),
        se_x2: se(var_y2),
        se_x1_raw: se(var_y1_raw),
        se_x2_raw: se(var_y2_raw),
        se_mean_t: se(var_t),
        se_mean_t_raw: se(var_t_raw),
        se_mean_sqrt_t: se(var_b),
        eps_hat: e[13],
        vn_hat: e[12],
        k_total: noise.k * m_c,
    };
    Ok((mom, stats))
}

fn masses(f: &TransmittanceDistribution, noise: &EstimateNoise, layout: &ClusterLayout) -> Result<Vec<f64>> {
    let mut cdf = vec![0.0];
    for b in layout.edges() {
        cdf.push(estimate_cdf(f, noise, b)?);
    }
    cdf.push(1.0);
    Ok(cdf.windows(2).map(|w| (w[1] - w[0]).max(0.0)).collect())
}

/// Conditional moments, mass and worst-case channel of one cluster of an
/// analytic model with `m` packages of `k` disclosed pairs each.
pub fn cluster_stats(
    f: &TransmittanceDistribution,
    interval: Interval,
    k: f64,
    m: f64,
    p: &ProtocolParams,
) -> Result<ClusterReport> {
    cluster_stats_with(f, interval, k, m, p, NoiseFloor::default())
}

pub fn cluster_stats_with(
    f: &TransmittanceDistribution,
    interval: Interval,
    k: f64,
    m: f64,
    p: &ProtocolParams,
    floor: NoiseFloor,
) -> Result<ClusterReport> {
    let noise = EstimateNoise::new(k, p)?;
    let mass = if interval == Interval::ALL {
        1.0
    } else {
        let hi = interval.hi.map_or(Ok(1.0), |h| estimate_cdf(f, &noise, h))?;
        let lo = interval.lo.map_or(Ok(0.0), |l| estimate_cdf(f, &noise, l))?;
        (hi - lo).max(0.0)
    };
    analytic_cluster(f, &noise, interval, mass, m, p, floor)
}

fn analytic_cluster(
    f: &TransmittanceDistribution,
    noise: &EstimateNoise,
    interval: Interval,
    mass: f64,
    m: f64,
    p: &ProtocolParams,
    floor: NoiseFloor,
) -> Result<ClusterReport> {
    if mass * m < 2.0 {
        if mass <= 1e-14 {
            return Err(Error::EmptyCluster { lo: interval.lo, hi: interval.hi });
        }
        return Err(Error::ClusterTooSmall { packages: mass * m });
    }
    let (mom, stats) = model_stats(f, noise, &interval, mass, m)?;
    let wc = estimation::worst_case_with(&stats, stats.eps_upper_bound(p.z_conf), p.v_prime(), p.z_conf, floor)?;
    let mut flags = Vec::new();
    if wc.unusable {
        flags.push(ClusterFlag::Unusable);
    }
    if mass < LOW_MASS {
        flags.push(ClusterFlag::LowMass);
    }
    Ok(ClusterReport {
        interval,
        mass,
        cond_moments: Some(mom),
        stats: Some(stats),
        wc: Some(wc),
        n_c: 0.0,
        k_c: 0.0,
        rate: None,
        flags,
    })
}

/// Cluster boundaries on the `T̂` axis.
///
/// With `C ≥ 1` clusters the layout holds an optional lower cutoff (packages
/// below it are discarded) and `C − 1` interior cuts; the top cluster is
/// open above. `C = 0` pools everything.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterLayout {
    pub lower_cutoff: Option<f64>,
    pub cuts: Vec<f64>,
}

impl ClusterLayout {
    pub fn pooled() -> Self {
        ClusterLayout { lower_cutoff: None, cuts: Vec::new() }
    }

    pub fn new(lower_cutoff: Option<f64>, cuts: Vec<f64>) -> Result<Self> {
        let l = ClusterLayout { lower_cutoff, cuts };
        let edges: Vec<f64> = l.edges().collect();
        if edges.iter().any(|x| !x.is_finite()) || edges.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidParameter(format!(
                "cluster boundaries must be finite and strictly increasing (got {edges:?})"
            )));
        }
        Ok(l)
    }

    /// All finite boundaries in increasing order.
    pub fn edges(&self) -> impl Iterator<Item = f64> + '_ {
        self.lower_cutoff.into_iter().chain(self.cuts.iter().copied())
    }

    /// Key-carrying intervals.
    pub fn intervals(&self) -> Vec<Interval> {
        let mut lo = self.lower_cutoff;
        let mut out = Vec::with_capacity(self.cuts.len() + 1);
        for &c in &self.cuts {
            out.push(Interval { lo, hi: Some(c) });
            lo = Some(c);
        }
        out.push(Interval { lo, hi: None });
        out
    }
}

/// A cluster layout with its per-cluster analysis and total rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterPlan {
    /// Number of clusters `C` (0: no clusterization).
    pub clusters: usize,
    pub lower_cutoff: Option<f64>,
    pub boundaries: Vec<f64>,
    pub per_cluster: Vec<ClusterReport>,
    /// Share of packages below the lower cutoff.
    pub discarded_mass: f64,
    /// Mass-weighted key rate, bits per state over all `N` states.
    pub total_rate: f64,
    pub r: f64,
    pub v: f64,
    pub n: usize,
    pub m: f64,
    pub noise_floor: NoiseFloor,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridMeta>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl ClusterPlan {
    pub fn layout(&self) -> ClusterLayout {
        ClusterLayout { lower_cutoff: self.lower_cutoff, cuts: self.boundaries.clone() }
    }

    /// `Σ mass` over the key-carrying clusters plus the discarded share.
    pub fn total_mass(&self) -> f64 {
        self.per_cluster.iter().map(|c| c.mass).sum::<f64>() + self.discarded_mass
    }
}

/// Options shared by the analytic and empirical evaluations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RateOptions {
    pub floor: NoiseFloor,
    /// Clusters holding less than this share of packages carry no key.
    pub min_mass: f64,
}

impl Default for RateOptions {
    fn default() -> Self {
        RateOptions { floor: NoiseFloor::default(), min_mass: 0.0 }
    }
}

fn attach_rate(c: &mut ClusterReport, n: f64, p: &ProtocolParams, opts: &RateOptions) -> Result<()> {
    c.n_c = c.mass * n;
    if c.mass < opts.min_mass {
        c.flags.push(ClusterFlag::BelowMinMass);
        return Ok(());
    }
    if let Some(wc) = &c.wc {
        let rep = security::key_rate(wc, c.n_c, p)?;
        c.k_c = rep.k;
        c.rate = Some(rep);
    }
    Ok(())
}

fn skipped(interval: Interval, mass: f64, err: &Error) -> Option<ClusterReport> {
    let flag = match err {
        Error::EmptyCluster { .. } => ClusterFlag::Empty,
        Error::ClusterTooSmall { .. } => ClusterFlag::TooSmall,
        _ => return None,
    };
    Some(ClusterReport {
        interval,
        mass,
        cond_moments: None,
        stats: None,
        wc: None,
        n_c: 0.0,
        k_c: 0.0,
        rate: None,
        flags: vec![flag],
    })
}

fn clusters_of(layout: &ClusterLayout, pooled: bool) -> usize {
    if pooled {
        0
    } else {
        layout.cuts.len() + 1
    }
}

/// Total key rate of an analytic model: `m` packages of `n` states drawn
/// from `f`. An empty `layout` with no cutoff is the pooled (`C = 0`) case.
pub fn total_key_rate(
    f: &TransmittanceDistribution,
    layout: &ClusterLayout,
    n: usize,
    m: f64,
    p: &ProtocolParams,
) -> Result<ClusterPlan> {
    total_key_rate_with(f, layout, n, m, p, &RateOptions::default())
}

pub fn total_key_rate_with(
    f: &TransmittanceDistribution,
    layout: &ClusterLayout,
    n: usize,
    m: f64,
    p: &ProtocolParams,
    opts: &RateOptions,
) -> Result<ClusterPlan> {
    p.validate()?;
    if n < 1 || !(m >= 1.0) {
        return Err(Error::InvalidParameter(format!("need n, m ≥ 1 (got {n}, {m})")));
    }
    let noise = EstimateNoise::new(p.r * n as f64, p)?;
    let pooled = layout.lower_cutoff.is_none() && layout.cuts.is_empty();
    let mass = if pooled { vec![1.0] } else { masses(f, &noise, layout)? };
    let (discarded_mass, key_masses) = if layout.lower_cutoff.is_some() {
        (mass[0], &mass[1..])
    } else {
        (0.0, &mass[..])
    };
    let n_states = n as f64 * m;

    let mut per_cluster = Vec::new();
    for (iv, &mc) in layout.intervals().into_iter().zip(key_masses) {
        let mut c = match analytic_cluster(f, &noise, iv, mc, m, p, opts.floor) {
            Ok(c) => c,
            Err(e) => skipped(iv, mc, &e).ok_or(e)?,
        };
        attach_rate(&mut c, n_states, p, opts)?;
        per_cluster.push(c);
    }
    Ok(finish_plan(layout, pooled, per_cluster, discarded_mass, n, m, p, opts))
}

#[allow(clippy::too_many_arguments)]
fn finish_plan(
    layout: &ClusterLayout,
    pooled: bool,
    per_cluster: Vec<ClusterReport>,
    discarded_mass: f64,
    n: usize,
    m: f64,
    p: &ProtocolParams,
    opts: &RateOptions,
) -> ClusterPlan {
    let total_rate = per_cluster.iter().map(|c| c.mass * c.k_c).sum();
    ClusterPlan {
        clusters: clusters_of(layout, pooled),
        lower_cutoff: layout.lower_cutoff,
        boundaries: layout.cuts.clone(),
        per_cluster,
        discarded_mass,
        total_rate,
        r: p.r,
        v: p.v,
        n,
        m,
        noise_floor: opts.floor,
        grid: None,
        note: None,
    }
}

/// Total key rate from package estimates, clustering the packages by their
/// `T̂` values. Masses are package fractions.
pub fn cluster_estimates(
    estimates: &[PackageEstimate],
    layout: &ClusterLayout,
    n: usize,
    p: &ProtocolParams,
) -> Result<ClusterPlan> {
    cluster_estimates_with(estimates, layout, n, p, &RateOptions::default())
}

pub fn cluster_estimates_with(
    estimates: &[PackageEstimate],
    layout: &ClusterLayout,
    n: usize,
    p: &ProtocolParams,
    opts: &RateOptions,
) -> Result<ClusterPlan> {
    p.validate()?;
    if estimates.is_empty() {
        return Err(Error::InsufficientData { needed: 2, got: 0 });
    }
    let m = estimates.len() as f64;
    let pooled = layout.lower_cutoff.is_none() && layout.cuts.is_empty();
    let discarded = layout
        .lower_cutoff
        .map_or(0, |c| estimates.iter().filter(|e| e.t_hat <= c).count());
    let n_states = n as f64 * m;

    let mut per_cluster = Vec::new();
    for iv in layout.intervals() {
        let members: Vec<PackageEstimate> = estimates.iter().filter(|e| iv.contains(e.t_hat)).copied().collect();
        let mass = members.len() as f64 / m;
        let mut c = match cluster_from_members(&members, iv, mass, p, opts.floor) {
            Ok(c) => c,
            Err(e) => skipped(iv, mass, &e).ok_or(e)?,
        };
        attach_rate(&mut c, n_states, p, opts)?;
        per_cluster.push(c);
    }
    Ok(finish_plan(layout, pooled, per_cluster, discarded as f64 / m, n, m, p, opts))
}

fn cluster_from_members(
    members: &[PackageEstimate],
    interval: Interval,
    mass: f64,
    p: &ProtocolParams,
    floor: NoiseFloor,
) -> Result<ClusterReport> {
    match members.len() {
        0 => return Err(Error::EmptyCluster { lo: interval.lo, hi: interval.hi }),
        1 => return Err(Error::ClusterTooSmall { packages: 1.0 }),
        _ => {}
    }
    let stats = estimation::aggregate(members)?;
    let wc = estimation::worst_case_with(&stats, stats.eps_upper_bound(p.z_conf), p.v_prime(), p.z_conf, floor)?;
    let mut flags = Vec::new();
    if wc.unusable {
        flags.push(ClusterFlag::Unusable);
    }
    if mass < LOW_MASS {
        flags.push(ClusterFlag::LowMass);
    }
    Ok(ClusterReport {
        interval,
        mass,
        cond_moments: None,
        stats: Some(stats),
        wc: Some(wc),
        n_c: 0.0,
        k_c: 0.0,
        rate: None,
        flags,
    })
}
