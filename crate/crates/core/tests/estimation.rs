use fading_cvqkd::channel::package_seed;
use fading_cvqkd::estimation::{
    estimate_noise, estimate_pairs, estimate_sqrt_t, estimate_t, worst_case_rectangular_with, worst_case_with,
    BoundMethod,
};
use fading_cvqkd::par::map_range;
use fading_cvqkd::{
    aggregate, simulate_package, worst_case, worst_case_rectangular, Exec, NoiseFloor, PackageEstimate,
    ProtocolParams, TransmittanceDistribution,
};
use proptest::prelude::*;

fn protocol(v: f64, v_s: f64, eps: f64) -> ProtocolParams {
    ProtocolParams { v, v_s, eps, ..ProtocolParams::default() }
}

/// Estimates of `count` packages with `k` disclosed pairs each, drawn at
/// transmittances `ts`, without keeping the raw data around.
fn estimates(ts: &[f64], k: usize, p: &ProtocolParams, seed: u64) -> Vec<PackageEstimate> {
    map_range(Exec::default(), ts.len(), |i| {
        let pk = simulate_package(ts[i], p, k, package_seed(seed, i)).unwrap();
        estimate_pairs(&pk.m, &pk.b, p).unwrap()
    })
}

fn mean_var(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = xs.clone().count() as f64;
    let m = xs.clone().sum::<f64>() / n;
    (m, xs.map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0))
}

#[test]
fn estimator_variance_law() {
    let p = protocol(10.0, 1.0, 0.5);
    let reps = 10_000;
    let t = 0.5;
    let est = estimates(&vec![t; reps], 1000, &p, 1);
    let vn = p.noise_variance(t);
    assert!((vn - 1.5).abs() < 1e-12);

    let (ms, vs) = mean_var(est.iter().map(|e| e.sqrt_t_hat));
    let want = (2.0 * t + vn / p.v) / 1000.0;
    assert!((want - 0.00115).abs() < 1e-12);
    assert!((vs - want).abs() < 0.05 * want, "{vs} vs {want}");
    assert!((ms - t.sqrt()).abs() < 4.0 * (want / reps as f64).sqrt());

    let (_, vt) = mean_var(est.iter().map(|e| e.t_hat));
    let want_t = 4.0 / 1000.0 * (2.0 * t * t + t * vn / p.v);
    assert!((vt - want_t).abs() < 0.05 * want_t, "{vt} vs {want_t}");
}

#[test]
fn variance_law_across_regimes() {
    let p = protocol(5.0, 0.1, 0.01);
    for &k in &[100usize, 1000, 10_000] {
        for &t in &[0.1, 0.5, 0.9] {
            let reps = 2000;
            let est = estimates(&vec![t; reps], k, &p, 7 + k as u64);
            let (ms, vs) = mean_var(est.iter().map(|e| e.sqrt_t_hat));
            let want = (2.0 * t + p.noise_variance(t) / p.v) / k as f64;
            assert!((vs - want).abs() < 0.1 * want, "k={k} T={t}: {vs} vs {want}");
            assert!((ms - t.sqrt()).abs() < 4.0 * (want / reps as f64).sqrt(), "k={k} T={t}");
            // The reported per-package spread tracks the prediction.
            let (sig, _) = mean_var(est.iter().map(|e| e.sigma_sqrt_t.powi(2)));
            assert!((sig - want).abs() < 0.1 * want);
        }
    }
}

#[test]
fn noise_estimate_is_consistent() {
    let p = protocol(5.0, 1.0, 0.01);
    let t = 0.5;
    let pk = simulate_package(t, &p, 100_000, 3).unwrap();
    let (vn, eps) = estimate_noise(&pk.m, &pk.b, p.v, p.v_s).unwrap();
    let tol = 4.0 * vn * (2.0 / 100_000f64).sqrt();
    assert!((eps - p.eps).abs() < tol, "{eps}");
    assert!((vn - p.noise_variance(t)).abs() < tol);

    let p = protocol(5.0, 1.0, 0.0);
    let pk = simulate_package(1.0, &p, 100_000, 4).unwrap();
    let (vn, _) = estimate_noise(&pk.m, &pk.b, p.v, p.v_s).unwrap();
    assert!((vn - 1.0).abs() < 4.0 * (2.0 / 100_000f64).sqrt());
}

#[test]
fn residual_noise_bias() {
    // Residuals are taken against √T̂ = ΣMB/(Vk), not the least-squares
    // slope; to leading order E[v̂_N] = V_N + 2TV/(k − 1).
    let p = protocol(5.0, 0.1, 0.01);
    let (t, k) = (0.5, 200);
    let est = estimates(&vec![t; 20_000], k, &p, 71);
    let (vn, var) = mean_var(est.iter().map(|e| e.vn_hat));
    let want = p.noise_variance(t) + 2.0 * t * p.v / (k - 1) as f64;
    assert!((vn - want).abs() < 4.0 * (var / 20_000.0).sqrt() + 1e-3, "{vn} vs {want}");
    let (eps, _) = mean_var(est.iter().map(|e| e.eps_hat));
    let phi = (2.0 * t + p.noise_variance(t) / p.v) / k as f64;
    let want_eps = want - 1.0 + (t + phi) * (1.0 - p.v_s);
    assert!((eps - want_eps).abs() < 1e-3, "{eps} vs {want_eps}");
}

#[test]
fn noiseless_data_reveals_vacuum_offset() {
    let t = 0.6f64;
    let m: Vec<f64> = (0..500).map(|j| ((j as f64) * 0.37).sin() * 2.0).collect();
    let b: Vec<f64> = m.iter().map(|x| t.sqrt() * x).collect();
    let v = m.iter().map(|x| x * x).sum::<f64>() / m.len() as f64;
    let (s, _) = estimate_sqrt_t(&m, &b, v).unwrap();
    assert!((s - t.sqrt()).abs() < 1e-12);
    let (th, _) = estimate_t(&m, &b, v).unwrap();
    assert!((th - t).abs() < 1e-12);
    let (vn, eps) = estimate_noise(&m, &b, v, 0.1).unwrap();
    assert!(vn.abs() < 1e-20);
    assert!((eps - (-(1.0 - t * 0.9))).abs() < 1e-12);
}

#[test]
fn aggregate_recovers_fluctuation() {
    let p = protocol(5.0, 0.1, 0.01);
    let m = 10_000;
    for dist in [
        TransmittanceDistribution::uniform(0.0, 1.0).unwrap(),
        TransmittanceDistribution::truncated_normal(0.5, 0.1).unwrap(),
    ] {
        let ts = dist.sample(31, m).unwrap();
        let est = estimates(&ts, 500, &p, 32);
        let s = aggregate(&est).unwrap();
        let mo = dist.moments().unwrap();
        let x1 = s.x1(NoiseFloor::Subtract);
        assert!((x1 - mo.var_sqrt_t).abs() < 4.0 * s.se_x1(NoiseFloor::Subtract), "{}: {x1}", dist.label());
        let x2 = s.x2(NoiseFloor::Subtract);
        let want2 = mo.mean_t + mo.mean_sqrt_t.powi(2);
        assert!((x2 - want2).abs() < 4.0 * s.se_x2(NoiseFloor::Subtract));
        // Without the correction both rotated statistics sit one noise floor higher.
        assert!((s.x1(NoiseFloor::Retain) - x1 - s.noise_floor).abs() < 1e-12);
        assert!((s.x2(NoiseFloor::Retain) - x2 - s.noise_floor).abs() < 1e-12);
        let eps_up = s.eps_upper_bound(2.0);
        assert!(eps_up > p.eps);
    }
}

#[test]
fn bounds_converge_to_effective_parameters() {
    let p = protocol(5.0, 0.1, 0.01);
    let dist = TransmittanceDistribution::truncated_normal(0.5, 0.1).unwrap();
    let ts = dist.sample(41, 20_000).unwrap();
    let est = estimates(&ts, 2000, &p, 42);
    let s = aggregate(&est).unwrap();
    let mo = dist.moments().unwrap();
    let wc = worst_case_with(&s, s.eps_upper_bound(2.0), p.v_prime(), 2.0, NoiseFloor::Subtract).unwrap();
    assert!((wc.t_eff_low - mo.effective_t()).abs() < 0.01, "{}", wc.t_eff_low);
    let eps_eff = p.eps + mo.var_sqrt_t * p.v_prime();
    assert!((wc.eps_eff_up - eps_eff).abs() < 0.01, "{} vs {eps_eff}", wc.eps_eff_up);
    assert!(wc.t_eff_low <= mo.effective_t() + 4.0 * s.se_x2(NoiseFloor::Subtract));
}

#[test]
fn rotated_bound_is_tighter_than_rectangular() {
    let p = protocol(5.0, 0.1, 0.01);
    let dist = TransmittanceDistribution::truncated_normal(0.5, 0.1).unwrap();
    let ts = dist.sample(51, 1000).unwrap();
    let est = estimates(&ts, 200, &p, 52);
    let s = aggregate(&est).unwrap();
    let eps_up = s.eps_upper_bound(2.0);
    for floor in [NoiseFloor::Retain, NoiseFloor::Subtract] {
        let rot = worst_case_with(&s, eps_up, p.v_prime(), 2.0, floor).unwrap();
        let rect = worst_case_rectangular_with(&s, eps_up, p.v_prime(), 2.0, floor).unwrap();
        assert_eq!(rot.method, BoundMethod::Rotated);
        assert_eq!(rect.method, BoundMethod::Rectangular);
        assert!(rot.eps_eff_up < rect.eps_eff_up);
        assert!(rot.var_sqrt_t_up < rect.var_sqrt_t_up);
        // Margin above the point estimate, which is where the two methods differ.
        let x1 = s.x1(floor);
        let ratio = (rect.var_sqrt_t_up - x1) / (rot.var_sqrt_t_up - x1);
        assert!(ratio >= 5.0, "{floor:?}: {ratio}");
    }
}

#[test]
fn zero_fluctuation_has_small_variance_bound() {
    let p = protocol(5.0, 0.1, 0.01);
    let est = estimates(&vec![0.5; 2000], 500, &p, 61);
    let s = aggregate(&est).unwrap();
    let wc = worst_case_with(&s, s.eps_upper_bound(2.0), p.v_prime(), 2.0, NoiseFloor::Subtract).unwrap();
    // Only sampling noise of the corrected statistic remains.
    assert!(wc.var_sqrt_t_up < 4.0 * s.se_x1(NoiseFloor::Subtract) + 1e-12);
    assert!((wc.t_eff_low - 0.5).abs() < 0.01);
}

#[test]
fn aggregate_needs_two_packages() {
    let p = protocol(5.0, 0.1, 0.01);
    let est = estimates(&[0.5], 100, &p, 1);
    assert!(aggregate(&est).is_err());
    assert!(aggregate(&[]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn package_estimates_are_coherent(t in 0.0f64..=1.0, v in 0.5f64..50.0, k in 10usize..400, seed in any::<u64>()) {
        let p = protocol(v, 0.1, 0.01);
        let pk = simulate_package(t, &p, k, seed).unwrap();
        let e = estimate_pairs(&pk.m, &pk.b, &p).unwrap();
        prop_assert!((e.t_hat - e.sqrt_t_hat.powi(2)).abs() <= 1e-15 * e.t_hat.max(1.0));
        prop_assert!(e.sigma_sqrt_t > 0.0 && e.sigma_t > 0.0);
        prop_assert!(e.vn_hat >= 0.0);
        prop_assert_eq!(e.k, k);
        prop_assert_eq!(e.sign_anomaly(), e.sqrt_t_hat < 0.0);
    }

    #[test]
    fn worst_case_is_pessimistic(seed in any::<u64>(), lo in 0.05f64..0.6, width in 0.05f64..0.4, z in 1.0f64..3.0) {
        let p = protocol(5.0, 0.1, 0.01);
        let dist = TransmittanceDistribution::uniform(lo, (lo + width).min(1.0)).unwrap();
        let ts = dist.sample(seed, 200).unwrap();
        let est = estimates(&ts, 100, &p, seed ^ 1);
        let s = aggregate(&est).unwrap();
        let eps_up = s.eps_upper_bound(z);
        prop_assert!(eps_up >= s.eps_hat.max(0.0));
        for floor in [NoiseFloor::Retain, NoiseFloor::Subtract] {
            let rot = worst_case_with(&s, eps_up, p.v_prime(), z, floor).unwrap();
            let rect = worst_case_rectangular_with(&s, eps_up, p.v_prime(), z, floor).unwrap();
            prop_assert!(rot.x1_up >= s.x1(floor).max(0.0));
            prop_assert!(rot.x2_low <= s.x2(floor));
            prop_assert!(rot.eps_eff_up >= eps_up);
            prop_assert!(rot.eps_eff_up <= rect.eps_eff_up + 1e-12);
            prop_assert!((0.0..=1.0).contains(&rot.t_eff_low));
            prop_assert_eq!(rot.unusable, 0.5 * (rot.x2_low - rot.x1_up) <= 0.0);
        }
        let default = worst_case(&s, eps_up, p.v_prime(), z).unwrap();
        prop_assert_eq!(default, worst_case_with(&s, eps_up, p.v_prime(), z, NoiseFloor::default()).unwrap());
        let rect = worst_case_rectangular(&s, eps_up, p.v_prime(), z).unwrap();
        prop_assert_eq!(rect.method, BoundMethod::Rectangular);
    }

    #[test]
    fn larger_z_is_more_conservative(seed in any::<u64>(), z in 0.5f64..3.0) {
        let p = protocol(5.0, 0.1, 0.01);
        let ts = TransmittanceDistribution::truncated_normal(0.5, 0.1).unwrap().sample(seed, 100).unwrap();
        let s = aggregate(&estimates(&ts, 100, &p, seed ^ 2)).unwrap();
        let a = worst_case(&s, s.eps_upper_bound(z), p.v_prime(), z).unwrap();
        let b = worst_case(&s, s.eps_upper_bound(z + 0.5), p.v_prime(), z + 0.5).unwrap();
        prop_assert!(b.eps_eff_up >= a.eps_eff_up);
        prop_assert!(b.t_eff_low <= a.t_eff_low);
    }
}
