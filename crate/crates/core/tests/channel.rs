use fading_cvqkd::channel::{package_seed, simulate_run_with};
use fading_cvqkd::{simulate_package, simulate_run, Exec, ProtocolParams, TransmittanceDistribution};

fn protocol(v: f64, v_s: f64, eps: f64) -> ProtocolParams {
    ProtocolParams { v, v_s, eps, ..ProtocolParams::default() }
}

fn cov(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / (n - 1.0)
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}

#[test]
fn identity_channel_returns_input_variance() {
    let p = protocol(5.0, 1.0, 0.0);
    let pk = simulate_package(1.0, &p, 1_000_000, 11).unwrap();
    let var_b = cov(&pk.b, &pk.b);
    let want = p.v + 1.0;
    let se = want * (2.0 / pk.len() as f64).sqrt();
    assert!((var_b - want).abs() < 4.0 * se, "{var_b}");
}

#[test]
fn fixed_channel_second_moments() {
    let p = protocol(10.0, 1.0, 0.01);
    let t = 0.5;
    let pk = simulate_package(t, &p, 1_000_000, 12).unwrap();
    let n = pk.len() as f64;
    let var_b = cov(&pk.b, &pk.b);
    let want_b = t * p.v + 1.0 + p.eps;
    assert!((var_b - want_b).abs() < 4.0 * want_b * (2.0 / n).sqrt());
    let c = cov(&pk.m, &pk.b);
    let want_c = t.sqrt() * p.v;
    // Var of the product of jointly normal variables: V·Var(B) + Cov².
    let se_c = ((p.v * want_b + want_c * want_c) / n).sqrt();
    assert!((c - want_c).abs() < 4.0 * se_c);

    // Residual noise after removing the conditional mean.
    let st = t.sqrt();
    let resid: Vec<f64> = pk.m.iter().zip(&pk.b).map(|(m, b)| b - st * m).collect();
    let vn = cov(&resid, &resid);
    let want_n = p.noise_variance(t);
    assert!((want_n - (1.0 + p.eps)).abs() < 1e-15);
    assert!((vn - want_n).abs() < 4.0 * want_n * (2.0 / n).sqrt());
}

#[test]
fn squeezed_input_noise_variance() {
    let p = protocol(4.0, 0.1, 0.02);
    let t = 0.3;
    assert!((p.v_prime() - 3.1).abs() < 1e-12);
    assert!((p.noise_variance(t) - (1.0 + 0.02 - 0.3 * 0.9)).abs() < 1e-12);
}

#[test]
fn pooled_moments_match_effective_channel() {
    // Pooled over a fading run, B behaves like a fixed channel with
    // T_eff = ⟨√T⟩² and ε_eff = ε + Var(√T)·V′.
    for dist in [
        TransmittanceDistribution::uniform(0.0, 1.0).unwrap(),
        TransmittanceDistribution::truncated_normal(0.5, 0.1).unwrap(),
    ] {
        let p = protocol(5.0, 0.1, 0.01);
        let run = simulate_run(&dist, &p, 1000, 1000, 21).unwrap();
        let mo = dist.moments().unwrap();
        let t_eff = mo.mean_sqrt_t.powi(2);
        let eps_eff = p.eps + mo.var_sqrt_t * p.v_prime();

        // Package-level contributions are iid, so their spread gives the SE.
        let covs: Vec<f64> = run
            .packages
            .iter()
            .map(|pk| pk.m.iter().zip(&pk.b).map(|(m, b)| m * b).sum::<f64>() / pk.len() as f64)
            .collect();
        let (c, se_c) = mean_se(&covs);
        assert!((c - mo.mean_sqrt_t * p.v).abs() < 4.0 * se_c, "{}", dist.label());

        let vars: Vec<f64> = run
            .packages
            .iter()
            .map(|pk| pk.b.iter().map(|b| b * b).sum::<f64>() / pk.len() as f64)
            .collect();
        let (vb, se_vb) = mean_se(&vars);
        let want = t_eff * p.v_prime() + eps_eff + 1.0;
        assert!((want - (mo.mean_t * p.v_prime() + p.eps + 1.0)).abs() < 1e-12);
        assert!((vb - want).abs() < 4.0 * se_vb, "{}: {vb} vs {want}", dist.label());
    }
}

#[test]
fn point_mass_run_is_constant() {
    let dist = TransmittanceDistribution::empirical(vec![0.8]).unwrap();
    let run = simulate_run(&dist, &ProtocolParams::default(), 50, 3, 5).unwrap();
    assert_eq!(run.true_t(), vec![0.8; 3]);
    assert_eq!(run.states(), 150);
}

#[test]
fn runs_are_deterministic() {
    let dist = TransmittanceDistribution::uniform(0.0, 1.0).unwrap();
    let p = ProtocolParams::default();
    let a = simulate_run_with(&dist, &p, 200, 64, 99, Exec::Sequential).unwrap();
    let b = simulate_run_with(&dist, &p, 200, 64, 99, Exec::Parallel).unwrap();
    let c = simulate_run_with(&dist, &p, 200, 64, 100, Exec::Sequential).unwrap();
    assert_eq!(a.packages, b.packages);
    assert_ne!(a.packages[0].m, c.packages[0].m);
    // Package i depends only on the run seed and its index.
    let again = simulate_package(a.packages[7].true_t, &p, 200, package_seed(99, 7)).unwrap();
    assert_eq!(again, a.packages[7]);
}

#[test]
fn rejects_bad_inputs() {
    let p = ProtocolParams::default();
    assert!(simulate_package(1.2, &p, 10, 0).is_err());
    assert!(simulate_package(0.5, &p, 1, 0).is_err());
    let bad = ProtocolParams { v: -1.0, ..p };
    assert!(simulate_package(0.5, &bad, 10, 0).is_err());
    let dist = TransmittanceDistribution::uniform(0.0, 1.0).unwrap();
    assert!(simulate_run(&dist, &p, 10, 0, 0).is_err());
}
