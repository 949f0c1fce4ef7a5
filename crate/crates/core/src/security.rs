//! Gaussian collective-attack key rate with reverse reconciliation.
//!
//! The source is modelled in its entanglement-based form: a two-mode state
//! with modal variance `V_A = V′ + 1`, sent through a channel `(T, ε)`. Eve's
//! information on Bob's homodyne outcome is `S(B:E) = S(AB) − S(A|x_B)`.

use serde::{Deserialize, Serialize};

use crate::channel::ProtocolParams;
use crate::error::{check_range, Error, Result};
use crate::estimation::WorstCaseChannel;

/// Eigenvalues below `1 − EIG_TOL` are rejected as unphysical; those in
/// `[1 − EIG_TOL, 1]` are rounded up to 1.
pub const EIG_TOL: f64 = 1e-9;

/// Singular-value cutoff of the homodyne pseudo-inverse.
const PINV_CUTOFF: f64 = 1e-12;

/// Fixed-parameter channel seen by the security analysis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffectiveChannel {
    pub t: f64,
    pub eps: f64,
}

impl EffectiveChannel {
    pub fn new(t: f64, eps: f64) -> Result<Self> {
        check_range("T", t, 0.0, 1.0)?;
        check_range("eps", eps, 0.0, f64::MAX)?;
        Ok(EffectiveChannel { t, eps })
    }
}

impl From<&WorstCaseChannel> for EffectiveChannel {
    fn from(wc: &WorstCaseChannel) -> Self {
        EffectiveChannel {
            t: wc.t_eff_low,
            eps: wc.eps_eff_up.max(0.0),
        }
    }
}

/// Entropy of a thermal mode with symplectic eigenvalue `nu`.
pub fn entropy_g(nu: f64) -> f64 {
    let a = 0.5 * (nu + 1.0);
    let b = 0.5 * (nu - 1.0);
    let hb = if b > 0.0 { b * b.log2() } else { 0.0 };
    a * a.log2() - hb
}

fn check(ch: &EffectiveChannel, p: &ProtocolParams) -> Result<()> {
    check_range("T", ch.t, 0.0, 1.0)?;
    check_range("eps", ch.eps, 0.0, f64::MAX)?;
    if !(p.v > 0.0 && p.v_s > 0.0) {
        return Err(Error::InvalidParameter(format!("V = {}, V_S = {} must be positive", p.v, p.v_s)));
    }
    if p.v + p.v_s < 1.0 {
        return Err(Error::InvalidParameter(format!(
            "V_A = V + V_S = {} is below the vacuum level",
            p.v + p.v_s
        )));
    }
    Ok(())
}

/// `I(A:B) = ½·log₂(V_B / V_{B|M})` with `V_B = T·V′ + 1 + ε` and
/// `V_{B|M} = T·(V_S − 1) + 1 + ε`.
pub fn mutual_information(ch: &EffectiveChannel, p: &ProtocolParams) -> Result<f64> {
    check(ch, p)?;
    let vb = ch.t * p.v_prime() + 1.0 + ch.eps;
    let vbm = ch.t * (p.v_s - 1.0) + 1.0 + ch.eps;
    if vbm <= 0.0 {
        return Err(Error::Unphysical(format!("conditional variance V_B|M = {vbm} is not positive")));
    }
    Ok(0.5 * (vb / vbm).log2())
}

type M2 = [[f64; 2]; 2];

fn mul(a: &M2, b: &M2) -> M2 {
    let mut c = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            c[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    c
}

fn transpose(a: &M2) -> M2 {
    [[a[0][0], a[1][0]], [a[0][1], a[1][1]]]
}

/// Moore–Penrose inverse of a symmetric 2×2 matrix.
fn pinv_sym(a: &M2) -> M2 {
    let (p, q, r) = (a[0][0], a[0][1], a[1][1]);
    let mean = 0.5 * (p + r);
    let rad = (0.25 * (p - r).powi(2) + q * q).sqrt();
    let lambdas = [mean + rad, mean - rad];
    let scale = lambdas[0].abs().max(lambdas[1].abs()).max(1.0);
    let mut out = [[0.0; 2]; 2];
    for &l in &lambdas {
        if l.abs() <= PINV_CUTOFF * scale {
            continue;
        }
        // Unit eigenvector of [[p, q], [q, r]] for eigenvalue l.
        let (x, y) = if q.abs() > 0.0 {
            (q, l - p)
        } else if (l - p).abs() <= (l - r).abs() {
            (1.0, 0.0)
        } else {
            (0.0, 1.0)
        };
        let n2 = x * x + y * y;
        let v = [x, y];
        for i in 0..2 {
            for j in 0..2 {
                out[i][j] += v[i] * v[j] / (n2 * l);
            }
        }
    }
    out
}

fn det(a: &M2) -> f64 {
    a[0][0] * a[1][1] - a[0][1] * a[1][0]
}

/// Symplectic eigenvalues `[ν₊, ν₋, ν₃]` of the joint state and of Alice's
/// mode conditioned on Bob's x-quadrature outcome, before clamping.
pub fn symplectic_eigenvalues(ch: &EffectiveChannel, p: &ProtocolParams) -> Result<[f64; 3]> {
    check(ch, p)?;
    let a = p.v + p.v_s;
    let b = ch.t * p.v_prime() + 1.0 + ch.eps;
    let c2 = ch.t * (a * a - 1.0);
    let c = c2.sqrt();

    let delta = a * a + b * b - 2.0 * c2;
    let d = (a * b - c2).abs();
    let disc = (delta * delta - 4.0 * d * d).max(0.0);
    let nu_plus = (0.5 * (delta + disc.sqrt())).sqrt();
    let nu_minus = if nu_plus > 0.0 { d / nu_plus } else { 0.0 };

    // γ_{A|x_B} = γ_A − σ (Π γ_B Π)^MP σᵀ with Π = diag(1, 0).
    let gamma_a: M2 = [[a, 0.0], [0.0, a]];
    let sigma: M2 = [[c, 0.0], [0.0, -c]];
    let proj_b: M2 = [[b, 0.0], [0.0, 0.0]];
    let corr = mul(&mul(&sigma, &pinv_sym(&proj_b)), &transpose(&sigma));
    let cond = [
        [gamma_a[0][0] - corr[0][0], gamma_a[0][1] - corr[0][1]],
        [gamma_a[1][0] - corr[1][0], gamma_a[1][1] - corr[1][1]],
    ];
    let nu3 = det(&cond).max(0.0).sqrt();
    Ok([nu_plus, nu_minus, nu3])
}

fn physical(nu: f64, which: &str) -> Result<f64> {
    if !nu.is_finite() || nu < 1.0 - EIG_TOL {
        Err(Error::Unphysical(format!("symplectic eigenvalue {which} = {nu} < 1")))
    } else {
        Ok(nu.max(1.0))
    }
}

/// Holevo bound `S(B:E)` in bits per state.
pub fn holevo_bound(ch: &EffectiveChannel, p: &ProtocolParams) -> Result<f64> {
    let [n1, n2, n3] = symplectic_eigenvalues(ch, p)?;
    let s = entropy_g(physical(n1, "nu+")?) + entropy_g(physical(n2, "nu-")?) - entropy_g(physical(n3, "nu3")?);
    Ok(s.max(0.0))
}

/// Asymptotic rate `β·I(A:B) − S(B:E)`.
pub fn asymptotic_rate(ch: &EffectiveChannel, p: &ProtocolParams) -> Result<f64> {
    Ok(p.beta * mutual_information(ch, p)? - holevo_bound(ch, p)?)
}

/// Privacy-amplification penalty `7·√(log₂(2/ε̄)/n)`.
pub fn delta_fs(n_key: f64, eps_bar: f64) -> f64 {
    if n_key <= 0.0 {
        return f64::INFINITY;
    }
    7.0 * ((2.0 / eps_bar).log2() / n_key).sqrt()
}

/// Everything that went into a finite-size key rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KeyRateReport {
    pub t_eff_low: f64,
    pub eps_eff_up: f64,
    pub i_ab: f64,
    pub s_be: f64,
    pub k_inf: f64,
    pub delta: f64,
    /// Operational rate `max(k_raw, 0)`.
    pub k: f64,
    pub k_raw: f64,
    pub n_used: f64,
    pub symplectic: [f64; 3],
    /// The symmetric entanglement-based model is a surrogate when `V_S ≠ 1`.
    pub squeezed_surrogate: bool,
}

/// `K = (1 − r)·[β·I − S − Δ((1 − r)·N)]` at the worst-case channel.
pub fn key_rate(wc: &WorstCaseChannel, n_total: f64, p: &ProtocolParams) -> Result<KeyRateReport> {
    key_rate_at(&EffectiveChannel::from(wc), n_total, p)
}

pub fn key_rate_at(ch: &EffectiveChannel, n_total: f64, p: &ProtocolParams) -> Result<KeyRateReport> {
    if !(n_total >= 1.0) {
        return Err(Error::InvalidParameter(format!("N must be at least 1 (got {n_total})")));
    }
    let i_ab = mutual_information(ch, p)?;
    let s_be = holevo_bound(ch, p)?;
    let k_inf = p.beta * i_ab - s_be;
    let n_used = (1.0 - p.r) * n_total;
    let delta = delta_fs(n_used, p.eps_bar);
    let k_raw = (1.0 - p.r) * (k_inf - delta);
    Ok(KeyRateReport {
        t_eff_low: ch.t,
        eps_eff_up: ch.eps,
        i_ab,
        s_be,
        k_inf,
        delta,
        k: k_raw.max(0.0),
        k_raw,
        n_used,
        symplectic: symplectic_eigenvalues(ch, p)?,
        squeezed_surrogate: p.v_s != 1.0,
    })
}
