use std::path::Path;

use anyhow::{Context, Result};
use fading_cvqkd::clustering::{cluster_estimates_with, total_key_rate_with};
use fading_cvqkd::estimation::estimate_run;
use fading_cvqkd::io::{load_empirical, read_estimates, read_run, write_estimates_csv, write_run_csv, write_true_t_csv, RunMeta};
use fading_cvqkd::security::key_rate;
use fading_cvqkd::{
    aggregate, optimize, simulate_run, worst_case, worst_case_rectangular, AggregateStats, ClusterPlan, Exec,
    KeyRateReport, PackageEstimate, TransmittanceDistribution, WorstCaseChannel,
};
use log::{info, warn};
use serde::Serialize;

use crate::config::{Mode, ScenarioConfig};
use crate::output::{num, Outputs};

pub fn simulate(cfg: &ScenarioConfig) -> Result<Outputs> {
    let dist = cfg.dist.build()?;
    info!("simulating {} packages of {} states from {}", cfg.m, cfg.n, dist.label());
    let run = simulate_run(&dist, &cfg.protocol, cfg.n, cfg.m, cfg.seed)?;
    let mut out = Outputs::default();
    let mut csv = Vec::new();
    write_run_csv(&run, &mut csv)?;
    out.bytes("run.csv", csv);
    out.json("run.json", &RunMeta::of(&run))?;
    let mut t = Vec::new();
    write_true_t_csv(&run, &mut t)?;
    out.bytes("true_t.csv", t);
    println!("simulated {} states ({} packages × {})", run.states(), cfg.m, cfg.n);
    Ok(out)
}

#[derive(Serialize)]
struct Residuals {
    packages: usize,
    /// Sample std of `√T̂ − √T`.
    std: f64,
    /// Root-mean-square of the predicted per-package standard errors.
    predicted_std: f64,
    max_abs: f64,
}

#[derive(Serialize)]
struct EstimateReport {
    stats: AggregateStats,
    eps_up: f64,
    worst_case: WorstCaseChannel,
    rectangular: WorstCaseChannel,
    key_rate: Option<KeyRateReport>,
    sign_anomalies: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    residuals: Option<Residuals>,
}

pub fn estimate(cfg: &ScenarioConfig, run_dir: &Path) -> Result<Outputs> {
    let true_t = run_dir.join("true_t.csv");
    let with_truth = !cfg.blind && true_t.exists();
    let run = read_run(&run_dir.join("run.csv"), &run_dir.join("run.json"), with_truth.then_some(true_t.as_path()))
        .with_context(|| format!("reading run from {}", run_dir.display()))?;
    let est = estimate_run(&run, Exec::default())?;
    let mut p = run.protocol;
    p.z_conf = cfg.protocol.z_conf;
    let stats = aggregate(&est)?;
    let eps_up = stats.eps_upper_bound(p.z_conf);
    let wc = worst_case(&stats, eps_up, p.v_prime(), p.z_conf)?;
    let rect = worst_case_rectangular(&stats, eps_up, p.v_prime(), p.z_conf)?;
    let rate = if wc.unusable { None } else { Some(key_rate(&wc, run.states() as f64, &p)?) };
    let anomalies = est.iter().filter(|e| e.sign_anomaly()).count();
    if anomalies > 0 {
        warn!("{anomalies} packages have a negative covariance estimate");
    }

    let mut out = Outputs::default();
    let mut csv = Vec::new();
    write_estimates_csv(&est, &mut csv)?;
    out.bytes("estimates.csv", csv);

    let residuals = if with_truth {
        let rows: Vec<Vec<String>> = run
            .packages
            .iter()
            .zip(&est)
            .enumerate()
            .map(|(i, (pk, e))| {
                let s = pk.true_t.sqrt();
                vec![i.to_string(), num(pk.true_t), num(s), num(e.sqrt_t_hat), num(e.sqrt_t_hat - s)]
            })
            .collect();
        out.csv("residuals.csv", &["package", "T", "sqrtT", "sqrtT_hat", "residual"], &rows)?;
        Some(residual_summary(&run.packages.iter().map(|p| p.true_t).collect::<Vec<_>>(), &est, &p))
    } else {
        None
    };
    let report = EstimateReport {
        stats,
        eps_up,
        worst_case: wc,
        rectangular: rect,
        key_rate: rate,
        sign_anomalies: anomalies,
        residuals,
    };
    out.json("aggregate.json", &report)?;
    println!(
        "{} packages: ⟨T̂⟩ = {:.5}, Var(√T) ≤ {:.3e} (rectangular {:.3e}), T_eff ≥ {:.5}, ε_eff ≤ {:.5}, K = {}",
        est.len(),
        stats.mean_t_hat,
        wc.var_sqrt_t_up,
        rect.var_sqrt_t_up,
        wc.t_eff_low,
        wc.eps_eff_up,
        rate.map_or("n/a".into(), |r| format!("{:.5}", r.k))
    );
    Ok(out)
}

fn residual_summary(ts: &[f64], est: &[PackageEstimate], p: &fading_cvqkd::ProtocolParams) -> Residuals {
    let r: Vec<f64> = ts.iter().zip(est).map(|(t, e)| e.sqrt_t_hat - t.sqrt()).collect();
    let n = r.len() as f64;
    let mean = r.iter().sum::<f64>() / n;
    let var = r.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    let pred = ts
        .iter()
        .zip(est)
        .map(|(&t, e)| (2.0 * t + p.noise_variance(t) / p.v) / e.k as f64)
        .sum::<f64>()
        / n;
    Residuals {
        packages: r.len(),
        std: var.sqrt(),
        predicted_std: pred.sqrt(),
        max_abs: r.iter().fold(0.0, |a, x| a.max(x.abs())),
    }
}

pub fn keyrate(cfg: &ScenarioConfig, estimates: Option<&Path>) -> Result<Outputs> {
    let layout = cfg.layout.build()?;
    let plan = match (cfg.mode, estimates) {
        (Mode::Analytic, None) => {
            let dist = cfg.dist.build()?;
            total_key_rate_with(&dist, &layout, cfg.n, cfg.m as f64, &cfg.protocol, &cfg.optimizer.rate)?
        }
        (_, Some(path)) => {
            let est = read_estimates(path, cfg.protocol.v_s)?;
            cluster_estimates_with(&est, &layout, cfg.n, &cfg.protocol, &cfg.optimizer.rate)?
        }
        (Mode::MonteCarlo, None) => {
            let dist = cfg.dist.build()?;
            let run = simulate_run(&dist, &cfg.protocol, cfg.n, cfg.m, cfg.seed)?;
            let est = estimate_run(&run, Exec::default())?;
            cluster_estimates_with(&est, &layout, cfg.n, &cfg.protocol, &cfg.optimizer.rate)?
        }
    };
    print_plan(&plan);
    let mut out = Outputs::default();
    out.json("keyrate.json", &plan)?;
    Ok(out)
}

pub fn optimize_cmd(cfg: &ScenarioConfig) -> Result<Outputs> {
    let dist = cfg.dist.build()?;
    info!("optimizing C = {} for {}", cfg.clusters, dist.label());
    let plan = optimize(&dist, cfg.clusters, cfg.n, cfg.m as f64, &cfg.protocol, &cfg.optimizer)?;
    print_plan(&plan);
    let mut out = Outputs::default();
    out.json("plan.json", &plan)?;
    Ok(out)
}

pub fn print_plan(plan: &ClusterPlan) {
    println!(
        "C = {}: K = {:.6} bits/state at r = {:.4}, V = {:.4}",
        plan.clusters, plan.total_rate, plan.r, plan.v
    );
    for (i, c) in plan.per_cluster.iter().enumerate() {
        let bound = |x: Option<f64>| x.map_or("·".to_string(), |v| format!("{v:.4}"));
        println!(
            "  cluster {}: ({}, {}] mass {:.4} rate {}{}",
            i + 1,
            bound(c.interval.lo),
            bound(c.interval.hi),
            c.mass,
            c.rate.map_or("n/a".into(), |r| format!("{:.6}", r.k)),
            if c.flags.is_empty() { String::new() } else { format!(" {:?}", c.flags) }
        );
    }
}

#[derive(Serialize)]
struct IngestSummary {
    samples: usize,
    mean_t: f64,
    mean_sqrt_t: f64,
    var_sqrt_t: f64,
    effective_t: f64,
}

pub fn ingest(trace: &Path, bin_width: Option<f64>) -> Result<Outputs> {
    let dist = load_empirical(trace, bin_width).with_context(|| format!("reading trace {}", trace.display()))?;
    let count = match &dist {
        TransmittanceDistribution::Empirical(e) => e.len(),
        _ => unreachable!("traces load as empirical laws"),
    };
    let m = dist.moments()?;
    let summary = IngestSummary {
        samples: count,
        mean_t: m.mean_t,
        mean_sqrt_t: m.mean_sqrt_t,
        var_sqrt_t: m.var_sqrt_t,
        effective_t: m.effective_t(),
    };
    println!(
        "{count} samples: ⟨T⟩ = {:.6}, ⟨√T⟩ = {:.6}, Var(√T) = {:.6}, T_eff = {:.6}",
        m.mean_t,
        m.mean_sqrt_t,
        m.var_sqrt_t,
        m.effective_t()
    );
    let mut out = Outputs::default();
    out.json("empirical.json", &dist)?;
    out.json("empirical_summary.json", &summary)?;
    Ok(out)
}
