//! Data series for the key-rate figures: rate and optimal disclosure versus
//! total states, optimal cluster layouts, and rate versus cluster count.

use anyhow::{Context, Result};
use clap::ValueEnum;
use fading_cvqkd::clustering::conditional_pdf;
use fading_cvqkd::security::asymptotic_rate;
use fading_cvqkd::{optimize, ClusterPlan, EffectiveChannel, ProtocolParams, TransmittanceDistribution};
use log::info;

use crate::config::ScenarioConfig;
use crate::output::{num, opt, Outputs};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Figure {
    /// Key rate without clusters versus total states, per package size.
    Fig6,
    /// Optimal disclosed fraction versus total states, per package size.
    Fig7,
    /// Optimal cluster layouts with conditional laws.
    Fig8,
    /// Optimal key rate versus number of clusters.
    Fig9,
}

const DENSITY_POINTS: usize = 200;

/// The four reference fading laws, or the configured one when `--dist` is given.
fn laws(cfg: &ScenarioConfig, explicit_dist: bool) -> Result<Vec<TransmittanceDistribution>> {
    if explicit_dist {
        return Ok(vec![cfg.dist.build()?]);
    }
    Ok(vec![
        TransmittanceDistribution::uniform(0.0, 1.0)?,
        TransmittanceDistribution::log_negative_weibull(1.25, 0.8)?,
        TransmittanceDistribution::log_negative_weibull(1.47, 0.6)?,
        TransmittanceDistribution::truncated_normal(0.5, 0.1)?,
    ])
}

/// Best asymptotic rate of the effective channel over the modulation range.
fn asymptotic_best(dist: &TransmittanceDistribution, cfg: &ScenarioConfig) -> Result<f64> {
    let mo = dist.moments()?;
    let (lo, hi) = (cfg.optimizer.v_range.0.ln(), cfg.optimizer.v_range.1.ln());
    let mut best = f64::NEG_INFINITY;
    for i in 0..=400 {
        let v = (lo + (hi - lo) * i as f64 / 400.0).exp();
        let p = ProtocolParams { v, ..cfg.protocol };
        let ch = EffectiveChannel::new(mo.effective_t(), p.eps + mo.var_sqrt_t * p.v_prime())?;
        // Modulations below the vacuum level are skipped.
        if let Ok(k) = asymptotic_rate(&ch, &p) {
            best = best.max(k);
        }
    }
    Ok(best.max(0.0))
}

/// `(n, N, plan)` for every package size and total state count with at least two packages.
fn sweep(cfg: &ScenarioConfig, dist: &TransmittanceDistribution) -> Result<Vec<(usize, f64, ClusterPlan)>> {
    let mut rows = Vec::new();
    for &n in &cfg.sweep.package_sizes {
        for &total in &cfg.sweep.total_states {
            let m = total / n as f64;
            if m < 2.0 {
                continue;
            }
            info!("n = {n}, N = {total:e}");
            let plan = optimize(dist, 0, n, m, &cfg.protocol, &cfg.optimizer)
                .with_context(|| format!("optimizing n = {n}, N = {total}"))?;
            rows.push((n, total, plan));
        }
    }
    Ok(rows)
}

pub fn run(cfg: &ScenarioConfig, figure: Figure, explicit_dist: bool, explicit_clusters: bool) -> Result<Outputs> {
    let mut out = Outputs::default();
    match figure {
        Figure::Fig6 | Figure::Fig7 => {
            let dist = cfg.dist.build()?;
            let k_inf = asymptotic_best(&dist, cfg)?;
            let rows: Vec<Vec<String>> = sweep(cfg, &dist)?
                .into_iter()
                .map(|(n, total, p)| {
                    let mut row = vec![dist.label(), n.to_string(), num(total), num(p.m)];
                    if figure == Figure::Fig6 {
                        row.extend([num(p.total_rate), num(k_inf), num(p.r), num(p.v)]);
                    } else {
                        row.extend([num(p.r), num(p.r * n as f64), num(p.v), num(p.total_rate)]);
                    }
                    row
                })
                .collect();
            if figure == Figure::Fig6 {
                out.csv("fig6.csv", &["dist", "n", "N", "m", "rate", "k_inf", "r", "V"], &rows)?;
            } else {
                out.csv("fig7.csv", &["dist", "n", "N", "m", "r", "disclosed", "V", "rate"], &rows)?;
            }
        }
        Figure::Fig8 => {
            let clusters = if explicit_clusters { cfg.clusters } else { 3 };
            let mut table = Vec::new();
            let mut plans = Vec::new();
            let mut density = Vec::new();
            for dist in laws(cfg, explicit_dist)? {
                info!("optimizing C = {clusters} for {}", dist.label());
                let plan = optimize(&dist, clusters, cfg.n, cfg.m as f64, &cfg.protocol, &cfg.optimizer)?;
                let label = dist.label();
                plans.push(vec![
                    label.clone(),
                    clusters.to_string(),
                    num(plan.total_rate),
                    num(plan.r),
                    num(plan.v),
                    opt(plan.lower_cutoff),
                    num(plan.discarded_mass),
                ]);
                let p = ProtocolParams { r: plan.r, v: plan.v, ..cfg.protocol };
                let k = plan.r * cfg.n as f64;
                let mut conds = Vec::new();
                for (i, c) in plan.per_cluster.iter().enumerate() {
                    let mo = c.cond_moments;
                    table.push(vec![
                        label.clone(),
                        (i + 1).to_string(),
                        opt(c.interval.lo),
                        opt(c.interval.hi),
                        num(c.mass),
                        opt(mo.map(|m| m.mean_t)),
                        opt(mo.map(|m| m.mean_sqrt_t)),
                        opt(mo.map(|m| m.var_sqrt_t)),
                        opt(c.wc.map(|w| w.t_eff_low)),
                        opt(c.wc.map(|w| w.eps_eff_up)),
                        opt(c.rate.map(|r| r.k)),
                    ]);
                    conds.push(conditional_pdf(&dist, c.interval, k, &p).ok());
                }
                for j in 1..DENSITY_POINTS {
                    let t = j as f64 / DENSITY_POINTS as f64;
                    let mut row = vec![label.clone(), num(t), num(dist.density(t)?)];
                    for c in &conds {
                        row.push(match c {
                            Some(c) => num(c.mass() * c.density(t)?),
                            None => "0".into(),
                        });
                    }
                    density.push(row);
                }
            }
            out.csv(
                "fig8.csv",
                &[
                    "dist",
                    "cluster",
                    "lo",
                    "hi",
                    "mass",
                    "mean_T",
                    "mean_sqrtT",
                    "var_sqrtT",
                    "T_eff_low",
                    "eps_eff_up",
                    "rate",
                ],
                &table,
            )?;
            out.csv("fig8_plans.csv", &["dist", "C", "rate", "r", "V", "cutoff", "discarded_mass"], &plans)?;
            let mut header = vec!["dist".to_string(), "T".into(), "f".into()];
            header.extend((1..=clusters.max(1)).map(|i| format!("p{i}")));
            let header: Vec<&str> = header.iter().map(String::as_str).collect();
            out.csv("fig8_density.csv", &header, &density)?;
        }
        Figure::Fig9 => {
            let max_c = if explicit_clusters { cfg.clusters } else { cfg.sweep.max_clusters };
            let mut rows = Vec::new();
            for dist in laws(cfg, explicit_dist)? {
                for c in 0..=max_c {
                    info!("optimizing C = {c} for {}", dist.label());
                    let plan = optimize(&dist, c, cfg.n, cfg.m as f64, &cfg.protocol, &cfg.optimizer)?;
                    let var = dist.moments()?.var_sqrt_t;
                    rows.push(vec![dist.label(), num(var), c.to_string(), num(plan.total_rate), num(plan.r), num(plan.v)]);
                }
            }
            let fixed = TransmittanceDistribution::fixed(0.5)?;
            let plan = optimize(&fixed, 0, cfg.n, cfg.m as f64, &cfg.protocol, &cfg.optimizer)?;
            rows.push(vec!["fixed[0.5]".into(), "0".into(), "0".into(), num(plan.total_rate), num(plan.r), num(plan.v)]);
            out.csv("fig9.csv", &["dist", "var_sqrtT", "C", "rate", "r", "V"], &rows)?;
        }
    }
    Ok(out)
}
