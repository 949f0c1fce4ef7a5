use std::time::Instant;

use fading_cvqkd::clustering::{
    cluster_estimates, conditional_pdf, total_key_rate_with, ClusterFlag, OptimizeOptions, RateOptions,
};
use fading_cvqkd::estimation::estimate_run;
use fading_cvqkd::security::key_rate_at;
use fading_cvqkd::{
    optimize, simulate_run, total_key_rate, ClusterLayout, ClusterPlan, EffectiveChannel, Exec, Interval,
    NoiseFloor, ProtocolParams, TransmittanceDistribution,
};
use proptest::prelude::*;

fn params(r: f64, v: f64) -> ProtocolParams {
    ProtocolParams { r, v, ..ProtocolParams::default() }
}

fn uniform() -> TransmittanceDistribution {
    TransmittanceDistribution::uniform(0.0, 1.0).unwrap()
}

#[test]
fn sharp_estimates_restrict_the_law() {
    let f = uniform();
    let iv = Interval::new(0.2, 0.4).unwrap();
    let c = conditional_pdf(&f, iv, 1e9, &params(0.2, 5.0)).unwrap();
    assert!((c.mass() - 0.2).abs() < 1e-4);
    let m = c.moments().unwrap();
    assert!((m.mean_t - 0.3).abs() < 1e-3, "{}", m.mean_t);
    assert!(c.density(0.3).unwrap() > 4.9 && c.density(0.3).unwrap() < 5.1);
    assert!(c.density(0.6).unwrap() < 1e-6);
}

#[test]
fn symmetric_window_keeps_the_midpoint() {
    let f = uniform();
    let c = conditional_pdf(&f, Interval::new(0.4, 0.6).unwrap(), 1000.0, &params(0.2, 5.0)).unwrap();
    let m = c.moments().unwrap();
    assert!(m.mean_t >= 0.4 - 0.005 && m.mean_t <= 0.6 + 0.005, "{}", m.mean_t);

    // Independent quadrature of the same window.
    let p = params(0.2, 5.0);
    let window = |s: f64| {
        let vn = 1.0 + p.eps - s * (1.0 - p.v_s);
        let sd = (4.0 * s * (2.0 * s + vn / p.v) / 1000.0).sqrt();
        let phi = |x: f64| 0.5 * statrs::function::erf::erfc(-x / std::f64::consts::SQRT_2);
        if sd == 0.0 {
            return if s > 0.4 && s <= 0.6 { 1.0 } else { 0.0 };
        }
        phi((0.6 - s) / sd) - phi((0.4 - s) / sd)
    };
    let h = 1e-5;
    let (mut w0, mut w1) = (0.0, 0.0);
    for i in 0..100_000 {
        let s = (i as f64 + 0.5) * h;
        w0 += window(s) * h;
        w1 += s * window(s) * h;
    }
    assert!((c.mass() - w0).abs() < 1e-8);
    assert!((m.mean_t - w1 / w0).abs() < 1e-8, "{} vs {}", m.mean_t, w1 / w0);
}

#[test]
fn selection_bias_pulls_towards_the_bulk() {
    let f = TransmittanceDistribution::truncated_normal(0.5, 0.1).unwrap();
    let p = params(0.2, 5.0);
    let iv = Interval::new(0.7, 0.75).unwrap();
    let c = conditional_pdf(&f, iv, 100.0, &p).unwrap();
    let m = c.moments().unwrap();
    assert!(m.mean_t < 0.7, "{}", m.mean_t);

    // Monte Carlo: actual T of the packages whose estimate lands in the window.
    let run = simulate_run(&f, &ProtocolParams { r: 0.5, ..p }, 200, 40_000, 8).unwrap();
    let est = estimate_run(&run, Exec::default()).unwrap();
    let sel: Vec<f64> = run
        .packages
        .iter()
        .zip(&est)
        .filter(|(_, e)| iv.contains(e.t_hat))
        .map(|(pk, _)| pk.true_t)
        .collect();
    let n = sel.len() as f64;
    assert!(n > 100.0);
    let mean = sel.iter().sum::<f64>() / n;
    let sd = (sel.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    assert!((mean - m.mean_t).abs() < 4.0 * sd / n.sqrt(), "{mean} vs {}", m.mean_t);
    let share = n / 40_000.0;
    assert!((share - c.mass()).abs() < 4.0 * (c.mass() * (1.0 - c.mass()) / 40_000.0).sqrt());
}

#[test]
fn pooled_cluster_matches_the_law() {
    let f = TransmittanceDistribution::log_negative_weibull(1.25, 0.8).unwrap();
    let plan = total_key_rate(&f, &ClusterLayout::pooled(), 1000, 1000.0, &params(0.2, 5.0)).unwrap();
    assert_eq!(plan.clusters, 0);
    let got = plan.per_cluster[0].cond_moments.unwrap();
    let want = f.moments().unwrap();
    assert!((got.var_sqrt_t - want.var_sqrt_t).abs() < 1e-9);
    assert!((plan.total_mass() - 1.0).abs() < 1e-15);
}

#[test]
fn fixed_channel_rate_by_hand() {
    let (t, n, m, k) = (0.5f64, 1000usize, 1000.0f64, 200.0f64);
    let p = params(0.2, 5.0);
    let f = TransmittanceDistribution::fixed(t).unwrap();
    let plan = total_key_rate(&f, &ClusterLayout::pooled(), n, m, &p).unwrap();

    // Retained floor: both rotated statistics carry φ, whose pseudo-values
    // have variances 2φ² and 16Tφ + 2φ².
    let vn = 1.0 + p.eps - t * (1.0 - p.v_s);
    let phi = (2.0 * t + vn / p.v) / k;
    let z = p.z_conf;
    let x1_up = phi + z * (2.0 * phi * phi / m).sqrt();
    let x2_low = 2.0 * t + phi - z * ((16.0 * t * phi + 2.0 * phi * phi) / m).sqrt();
    // Residuals against √T̂ inflate the noise estimate by 2TV/(k − 1).
    let vn_hat = vn + 2.0 * t * p.v / (k - 1.0);
    let eps_hat = vn_hat - 1.0 + (t + phi) * (1.0 - p.v_s);
    let eps_up = eps_hat + z * vn_hat * (2.0 / (k * m)).sqrt();
    let ch = EffectiveChannel::new(0.5 * (x2_low - x1_up), eps_up + x1_up * p.v_prime()).unwrap();
    let want = key_rate_at(&ch, n as f64 * m, &p).unwrap().k;
    assert!(want > 0.0);
    assert!((plan.total_rate - want).abs() < 1e-9 * want, "{} vs {want}", plan.total_rate);
}

#[test]
fn unreachable_cluster_is_flagged() {
    let f = TransmittanceDistribution::uniform(0.2, 0.4).unwrap();
    let layout = ClusterLayout::new(None, vec![0.9]).unwrap();
    let plan = total_key_rate(&f, &layout, 1000, 1000.0, &params(0.2, 5.0)).unwrap();
    let top = &plan.per_cluster[1];
    assert!(top.flags.contains(&ClusterFlag::Empty) || top.flags.contains(&ClusterFlag::TooSmall));
    assert_eq!(top.k_c, 0.0);
    assert!(plan.per_cluster[0].k_c > 0.0);
}

#[test]
fn min_mass_drops_small_clusters() {
    let f = uniform();
    let layout = ClusterLayout::new(None, vec![0.05]).unwrap();
    let opts = RateOptions { min_mass: 0.1, ..RateOptions::default() };
    let plan = total_key_rate_with(&f, &layout, 1000, 1000.0, &params(0.2, 5.0), &opts).unwrap();
    assert!(plan.per_cluster[0].mass < 0.1);
    assert!(plan.per_cluster[0].flags.contains(&ClusterFlag::BelowMinMass));
    assert_eq!(plan.per_cluster[0].k_c, 0.0);
}

fn pipeline_gap(f: &TransmittanceDistribution, layout: &ClusterLayout, p: &ProtocolParams) -> (f64, f64) {
    let (n, m) = (1000, 500);
    let diffs: Vec<f64> = (0..16)
        .map(|rep| {
            let run = simulate_run(f, p, n, m, 1000 + rep).unwrap();
            let est = estimate_run(&run, Exec::default()).unwrap();
            let mc = cluster_estimates(&est, layout, n, p).unwrap();
            let truth = TransmittanceDistribution::empirical(run.true_t()).unwrap();
            let model = total_key_rate(&truth, layout, n, m as f64, p).unwrap();
            assert!(model.total_rate > 0.0);
            mc.total_rate - model.total_rate
        })
        .collect();
    let r = diffs.len() as f64;
    let mean = diffs.iter().sum::<f64>() / r;
    let sd = (diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (r - 1.0)).sqrt();
    (mean, sd / r.sqrt())
}

#[test]
fn analytic_model_matches_simulated_pipeline() {
    let p = params(0.2, 5.0);
    let tn = TransmittanceDistribution::truncated_normal(0.5, 0.1).unwrap();
    let (gap, se) = pipeline_gap(&tn, &ClusterLayout::pooled(), &p);
    assert!(gap.abs() < 4.0 * se, "pooled: {gap} ± {se}");

    // Two groups further apart than several estimate spreads, so selecting
    // on the estimate does not truncate either group.
    let trace: Vec<f64> = (0..1000)
        .map(|i| if i % 2 == 0 { 0.1 } else { 0.88 } + 0.02 * ((i as f64 * 0.618_034) % 1.0))
        .collect();
    let split = TransmittanceDistribution::empirical(trace).unwrap();
    let layout = ClusterLayout::new(None, vec![0.45]).unwrap();
    let (gap, se) = pipeline_gap(&split, &layout, &params(0.5, 5.0));
    assert!(gap.abs() < 4.0 * se, "split: {gap} ± {se}");
}

#[test]
fn optimal_three_clusters_are_balanced() {
    let start = Instant::now();
    let plan = optimize(&uniform(), 3, 1000, 1000.0, &ProtocolParams::default(), &OptimizeOptions::default()).unwrap();
    assert_eq!(plan.clusters, 3);
    let shares: Vec<f64> = plan.per_cluster.iter().map(|c| c.mass).collect();
    assert!(shares.iter().all(|&s| s >= 0.1), "{shares:?}");
    assert!(plan.discarded_mass < 0.9);
    assert!((plan.total_mass() - 1.0).abs() < 1e-12);
    let grid = plan.grid.as_ref().unwrap();
    assert_eq!(grid.r_grid.len(), 12);
    assert!(grid.grid_rate <= plan.total_rate + 1e-15);
    eprintln!("C=3 optimisation took {:?}", start.elapsed());
}

#[test]
fn clustering_gains_nothing_without_fluctuation() {
    let f = TransmittanceDistribution::fixed(0.5).unwrap();
    let opts = OptimizeOptions { grid_points: 8, ..OptimizeOptions::default() };
    let c0 = optimize(&f, 0, 1000, 1000.0, &ProtocolParams::default(), &opts).unwrap();
    let c2 = optimize(&f, 2, 1000, 1000.0, &ProtocolParams::default(), &opts).unwrap();
    assert!(c0.total_rate > 0.0);
    assert!((c2.total_rate - c0.total_rate).abs() <= 0.02 * c0.total_rate, "{} vs {}", c2.total_rate, c0.total_rate);
}

#[test]
fn optimisation_is_deterministic() {
    let f = TransmittanceDistribution::truncated_normal(0.5, 0.1).unwrap();
    let seq = OptimizeOptions { grid_points: 4, exec: Exec::Sequential, ..OptimizeOptions::default() };
    let par = OptimizeOptions { exec: Exec::Parallel, ..seq.clone() };
    let a = optimize(&f, 1, 1000, 1000.0, &ProtocolParams::default(), &seq).unwrap();
    let b = optimize(&f, 1, 1000, 1000.0, &ProtocolParams::default(), &par).unwrap();
    assert_eq!(a, b);
    let json = serde_json::to_string(&a).unwrap();
    let back: ClusterPlan = serde_json::from_str(&json).unwrap();
    assert_eq!(serde_json::to_string(&back).unwrap(), json);
}

#[test]
fn subtracting_the_floor_changes_the_rate() {
    let f = TransmittanceDistribution::truncated_normal(0.5, 0.1).unwrap();
    let p = params(0.2, 5.0);
    let keep = total_key_rate(&f, &ClusterLayout::pooled(), 1000, 1000.0, &p).unwrap();
    let opts = RateOptions { floor: NoiseFloor::Subtract, ..RateOptions::default() };
    let sub = total_key_rate_with(&f, &ClusterLayout::pooled(), 1000, 1000.0, &p, &opts).unwrap();
    assert!(sub.total_rate > keep.total_rate);
    assert_eq!(sub.noise_floor, NoiseFloor::Subtract);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn masses_are_conserved(
        raw in proptest::collection::vec(0.0f64..1.0, 1..5),
        cutoff in proptest::option::of(-0.1f64..0.3),
        k in 10.0f64..900.0,
        which in 0usize..3,
    ) {
        let f = match which {
            0 => uniform(),
            1 => TransmittanceDistribution::truncated_normal(0.5, 0.1).unwrap(),
            _ => TransmittanceDistribution::log_negative_weibull(1.47, 0.6).unwrap(),
        };
        let mut cuts = raw;
        cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        cuts.dedup_by(|a, b| (*a - *b).abs() < 1e-6);
        let cutoff = cutoff.filter(|c| *c < cuts[0]);
        let layout = ClusterLayout::new(cutoff, cuts).unwrap();
        let n = 1000;
        let p = params(k / n as f64, 5.0);
        let plan = total_key_rate(&f, &layout, n, 1000.0, &p).unwrap();
        prop_assert!((plan.total_mass() - 1.0).abs() < 1e-8, "{}", plan.total_mass());
        prop_assert!(plan.per_cluster.iter().all(|c| c.mass >= 0.0 && c.k_c >= 0.0));
        prop_assert!(plan.total_rate >= 0.0);
    }
}
