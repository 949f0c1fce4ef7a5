//! Deterministic search over `(r, V)` and cluster boundaries.
//!
//! Boundaries are parametrised by quantile levels of the `T̂` law, so a
//! layout keeps its meaning while `r` and `V` move. The search runs a
//! geometric `(r, V)` grid, optimises levels on a `1/L` lattice at every
//! grid point by coordinate descent, then refines the best point with
//! halved steps.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{total_key_rate_with, ClusterLayout, ClusterPlan, RateOptions};
use crate::channel::ProtocolParams;
use crate::distributions::TransmittanceDistribution;
use crate::error::{Error, Result};
use crate::par::{self, Exec};
use crate::special::norm_cdf;

/// Points of the tabulated `T̂` CDF used to place boundaries.
const CDF_POINTS: usize = 512;
const MAX_SWEEPS: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizeOptions {
    pub r_range: (f64, f64),
    pub v_range: (f64, f64),
    /// Points per axis of the geometric `(r, V)` grid.
    pub grid_points: usize,
    /// Boundary lattice: levels `j/levels` of the `T̂` law.
    pub levels: usize,
    pub refine_passes: usize,
    /// Panels of the fixed rule used to tabulate the `T̂` law.
    pub rule_panels: usize,
    pub rate: RateOptions,
    #[serde(skip)]
    pub exec: Exec,
}

impl Default for OptimizeOptions {
    fn default() -> Self {
        OptimizeOptions {
            r_range: (0.01, 0.9),
            v_range: (0.5, 50.0),
            grid_points: 12,
            levels: 64,
            refine_passes: 2,
            rule_panels: 128,
            rate: RateOptions::default(),
            exec: Exec::default(),
        }
    }
}

/// Search metadata stored with an optimised plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridMeta {
    pub r_grid: Vec<f64>,
    pub v_grid: Vec<f64>,
    pub levels: usize,
    pub refine_passes: usize,
    /// Best grid point before refinement.
    pub grid_r: f64,
    pub grid_v: f64,
    pub grid_rate: f64,
    /// Quantile levels of the final boundaries (`None`: no cutoff).
    pub cutoff_level: Option<f64>,
    pub cut_levels: Vec<f64>,
    pub evaluations: usize,
}

fn geomspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![(lo * hi).sqrt()];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| {
            if i == n - 1 {
                hi
            } else {
                (a + (b - a) * i as f64 / (n - 1) as f64).exp()
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
struct Levels {
    cutoff: Option<f64>,
    cuts: Vec<f64>,
}

impl Levels {
    fn key(&self) -> Vec<u64> {
        let mut k = vec![self.cutoff.map_or(u64::MAX, f64::to_bits)];
        k.extend(self.cuts.iter().map(|c| c.to_bits()));
        k
    }

    fn ordered(&self) -> bool {
        let all: Vec<f64> = self.cutoff.into_iter().chain(self.cuts.iter().copied()).collect();
        all.iter().all(|&x| x > 0.0 && x < 1.0) && all.windows(2).all(|w| w[0] < w[1])
    }
}

struct Objective<'a> {
    f: &'a TransmittanceDistribution,
    n: usize,
    m: f64,
    template: ProtocolParams,
    rule: Vec<(f64, f64)>,
    opts: &'a OptimizeOptions,
}

/// Tabulated `T̂` CDF at one `(r, V)`.
struct EstimateLaw {
    t: Vec<f64>,
    cdf: Vec<f64>,
}

impl EstimateLaw {
    fn quantile(&self, q: f64) -> f64 {
        let i = self.cdf.partition_point(|&c| c < q).clamp(1, self.cdf.len() - 1);
        let (c0, c1) = (self.cdf[i - 1], self.cdf[i]);
        let x = if c1 > c0 { (q - c0) / (c1 - c0) } else { 0.5 };
        self.t[i - 1] + x.clamp(0.0, 1.0) * (self.t[i] - self.t[i - 1])
    }
}

struct Point<'o, 'a> {
    obj: &'o Objective<'a>,
    p: ProtocolParams,
    law: EstimateLaw,
    memo: HashMap<Vec<u64>, f64>,
    evaluations: usize,
}

impl<'a> Objective<'a> {
    fn params(&self, r: f64, v: f64) -> ProtocolParams {
        ProtocolParams { r, v, ..self.template }
    }

    fn valid(&self, r: f64, v: f64) -> bool {
        self.params(r, v).validate().is_ok() && v + self.template.v_s >= 1.0 && r * self.n as f64 >= 2.0
    }

    fn law(&self, p: &ProtocolParams) -> EstimateLaw {
        let k = p.r * self.n as f64;
        let nodes: Vec<(f64, f64, f64)> = self
            .rule
            .iter()
            .map(|&(s, w)| {
                let phi = (2.0 * s + p.noise_variance(s) / p.v) / k;
                (s, w, (4.0 * s * phi).max(0.0).sqrt())
            })
            .collect();
        let total: f64 = nodes.iter().map(|x| x.1).sum();
        let spread = nodes.iter().map(|x| x.2).fold(0.0, f64::max);
        let lo = nodes.iter().map(|x| x.0).fold(f64::INFINITY, f64::min) - 6.0 * spread;
        let hi = nodes.iter().map(|x| x.0).fold(f64::NEG_INFINITY, f64::max) + 6.0 * spread;
        let t: Vec<f64> = (0..CDF_POINTS)
            .map(|i| lo + (hi - lo) * i as f64 / (CDF_POINTS - 1) as f64)
            .collect();
        let cdf = t
            .iter()
            .map(|&x| {
                nodes
                    .iter()
                    .map(|&(s, w, sd)| {
                        let c = if sd > 0.0 {
                            norm_cdf((x - s) / sd)
                        } else if x >= s {
                            1.0
                        } else {
                            0.0
                        };
                        w * c
                    })
                    .sum::<f64>()
                    / total
            })
            .collect();
        EstimateLaw { t, cdf }
    }

    fn point(&self, r: f64, v: f64) -> Point<'_, 'a> {
        let p = self.params(r, v);
        let law = self.law(&p);
        Point { obj: self, p, law, memo: HashMap::new(), evaluations: 0 }
    }

    fn start_levels(&self, c: usize) -> Vec<Levels> {
        if c == 0 {
            return vec![Levels { cutoff: None, cuts: vec![] }];
        }
        let l = self.opts.levels as f64;
        let even = |from: f64| -> Vec<f64> {
            (1..c)
                .map(|i| (from + (l - from) * i as f64 / c as f64).round() / l)
                .collect()
        };
        let first = (l / 8.0).round();
        vec![
            Levels { cutoff: None, cuts: even(0.0) },
            Levels { cutoff: Some(first / l), cuts: even(first) },
        ]
    }
}

impl Levels {
    /// Layouts with one more cluster: a cut in the middle of every segment,
    /// or the cutoff turned into a cut.
    fn splits(&self, lattice: f64) -> Vec<Levels> {
        let mut edges: Vec<f64> = vec![self.cutoff.unwrap_or(0.0)];
        edges.extend(&self.cuts);
        edges.push(1.0);
        let mut out: Vec<Levels> = edges
            .windows(2)
            .filter_map(|w| {
                let mid = ((w[0] + w[1]) / 2.0 / lattice).round() * lattice;
                (mid > w[0] && mid < w[1]).then(|| {
                    let mut cuts = self.cuts.clone();
                    cuts.push(mid);
                    cuts.sort_by(f64::total_cmp);
                    Levels { cutoff: self.cutoff, cuts }
                })
            })
            .collect();
        if let Some(c) = self.cutoff {
            let mut cuts = vec![c];
            cuts.extend(&self.cuts);
            out.push(Levels { cutoff: None, cuts });
        }
        out
    }
}

impl Point<'_, '_> {
    fn layout(&self, lv: &Levels) -> Result<ClusterLayout> {
        ClusterLayout::new(
            lv.cutoff.map(|q| self.law.quantile(q)),
            lv.cuts.iter().map(|&q| self.law.quantile(q)).collect(),
        )
    }

    fn rate(&mut self, lv: &Levels) -> f64 {
        if !lv.ordered() && !(lv.cutoff.is_none() && lv.cuts.is_empty()) {
            return f64::NEG_INFINITY;
        }
        let key = lv.key();
        if let Some(&v) = self.memo.get(&key) {
            return v;
        }
        self.evaluations += 1;
        let o = self.obj;
        let val = match self
            .layout(lv)
            .and_then(|layout| total_key_rate_with(o.f, &layout, o.n, o.m, &self.p, &o.opts.rate))
        {
            Ok(plan) => plan.total_rate,
            Err(e) => {
                log::debug!("r = {}, V = {}: {e}", self.p.r, self.p.v);
                f64::NEG_INFINITY
            }
        };
        self.memo.insert(key, val);
        val
    }

    /// Coordinate descent over the levels with lattice `step`; slot 0 is the
    /// cutoff (which may also be absent).
    fn descend(&mut self, mut best: Levels, step: f64, full_range: bool) -> (Levels, f64) {
        let mut best_rate = self.rate(&best);
        if best.cutoff.is_none() && best.cuts.is_empty() {
            return (best, best_rate);
        }
        for _ in 0..MAX_SWEEPS {
            let mut improved = false;
            for slot in 0..=best.cuts.len() {
                for cand in self.candidates(&best, slot, step, full_range) {
                    let rate = self.rate(&cand);
                    if rate > best_rate {
                        best_rate = rate;
                        best = cand;
                        improved = true;
                    }
                }
            }
            if !improved {
                break;
            }
        }
        (best, best_rate)
    }

    fn candidates(&self, lv: &Levels, slot: usize, step: f64, full_range: bool) -> Vec<Levels> {
        let set = |x: Option<f64>| {
            let mut c = lv.clone();
            if slot == 0 {
                c.cutoff = x;
            } else {
                c.cuts[slot - 1] = x.expect("cuts are always present");
            }
            c
        };
        let current = if slot == 0 { lv.cutoff } else { Some(lv.cuts[slot - 1]) };
        let mut out = Vec::new();
        if full_range {
            let lower = if slot == 0 { 0.0 } else { lv.cutoff.into_iter().chain(lv.cuts[..slot - 1].iter().copied()).last().unwrap_or(0.0) };
            let upper = if slot < lv.cuts.len() { lv.cuts[slot] } else { 1.0 };
            if slot == 0 {
                out.push(set(None));
            }
            let mut x = lower + step;
            while x < upper - 0.5 * step {
                out.push(set(Some((x / step).round() * step)));
                x += step;
            }
        } else {
            match current {
                Some(x) => {
                    out.push(set(Some(x - step)));
                    out.push(set(Some(x + step)));
                }
                None => out.push(set(Some(step))),
            }
        }
        out.retain(|c| c != lv && (c.ordered() || (c.cutoff.is_none() && c.cuts.is_empty())));
        out
    }
}

struct GridResult {
    r: f64,
    v: f64,
    levels: Levels,
    rate: f64,
    evaluations: usize,
}

/// Optimise `(r, V)` and the boundaries of a `clusters`-cluster layout for
/// `m` packages of `n` states from `f`. Other protocol parameters come from
/// `template`. Ties are broken by grid order (ascending `r`, then `V`).
pub fn optimize(
    f: &TransmittanceDistribution,
    clusters: usize,
    n: usize,
    m: f64,
    template: &ProtocolParams,
    opts: &OptimizeOptions,
) -> Result<ClusterPlan> {
    f.validate()?;
    if opts.grid_points < 1 || opts.levels < 2 {
        return Err(Error::InvalidParameter("grid needs at least one point and two levels".into()));
    }
    if clusters > 0 && clusters >= opts.levels {
        return Err(Error::InvalidParameter(format!(
            "{clusters} clusters do not fit on a lattice of {} levels",
            opts.levels
        )));
    }
    let obj = Objective {
        f,
        n,
        m,
        template: *template,
        rule: f.rule(opts.rule_panels),
        opts,
    };
    let r_grid = geomspace(opts.r_range.0, opts.r_range.1, opts.grid_points);
    let v_grid = geomspace(opts.v_range.0, opts.v_range.1, opts.grid_points);
    let points: Vec<(f64, f64)> = r_grid.iter().flat_map(|&r| v_grid.iter().map(move |&v| (r, v))).collect();
    let lattice = 1.0 / opts.levels as f64;

    let results: Vec<Option<GridResult>> = par::map_slice(opts.exec, &points, |&(r, v)| {
        if !obj.valid(r, v) {
            return None;
        }
        let mut pt = obj.point(r, v);
        // Layouts for 1, 2, … clusters in turn; each also starts from the
        // previous optimum with one cluster split.
        let mut best: Option<(Levels, f64)> = None;
        for c in clusters.min(1)..=clusters {
            let mut starts = obj.start_levels(c);
            if let Some((prev, _)) = &best {
                starts.extend(prev.splits(lattice));
            }
            let mut level_best: Option<(Levels, f64)> = None;
            for start in starts {
                let (lv, rate) = pt.descend(start, lattice, true);
                if level_best.as_ref().is_none_or(|b| rate > b.1) {
                    level_best = Some((lv, rate));
                }
            }
            best = level_best;
        }
        let (levels, rate) = best.expect("at least one start");
        Some(GridResult { r, v, levels, rate, evaluations: pt.evaluations })
    });

    let mut evaluations: usize = results.iter().flatten().map(|g| g.evaluations).sum();
    let mut best: Option<&GridResult> = None;
    for g in results.iter().flatten() {
        if g.rate.is_finite() && best.is_none_or(|b| g.rate > b.rate) {
            best = Some(g);
        }
    }
    let best = best.ok_or_else(|| Error::InvalidParameter("no valid (r, V) point on the search grid".into()))?;
    let (grid_r, grid_v, grid_rate) = (best.r, best.v, best.rate);

    // Local refinement with halved steps.
    let log_step = |range: (f64, f64)| {
        if opts.grid_points > 1 {
            (range.1 / range.0).ln() / (opts.grid_points - 1) as f64
        } else {
            0.5
        }
    };
    let (hr, hv) = (log_step(opts.r_range), log_step(opts.v_range));
    let (mut r, mut v, mut levels, mut rate) = (best.r, best.v, best.levels.clone(), best.rate);
    for pass in 1..=opts.refine_passes {
        let scale = 0.5f64.powi(pass as i32);
        for _ in 0..MAX_SWEEPS {
            let mut improved = false;
            for (dr, dv) in [(-1.0, 0.0), (1.0, 0.0), (0.0, -1.0), (0.0, 1.0)] {
                let rc = (r * (dr * hr * scale).exp()).clamp(opts.r_range.0, opts.r_range.1);
                let vc = (v * (dv * hv * scale).exp()).clamp(opts.v_range.0, opts.v_range.1);
                if (rc, vc) == (r, v) || !obj.valid(rc, vc) {
                    continue;
                }
                let mut pt = obj.point(rc, vc);
                let cand = pt.rate(&levels);
                evaluations += pt.evaluations;
                if cand > rate {
                    (r, v, rate) = (rc, vc, cand);
                    improved = true;
                }
            }
            if !improved {
                break;
            }
        }
        let mut pt = obj.point(r, v);
        let (lv, lrate) = pt.descend(levels.clone(), lattice * scale, false);
        evaluations += pt.evaluations;
        if lrate > rate {
            levels = lv;
            rate = lrate;
        }
    }

    let pt = obj.point(r, v);
    let layout = pt.layout(&levels)?;
    let mut plan = total_key_rate_with(f, &layout, n, m, &pt.p, &opts.rate)?;
    if plan.total_rate <= 0.0 {
        plan.note = Some("no positive key rate found on the search grid".into());
    }
    plan.clusters = clusters;
    plan.grid = Some(GridMeta {
        r_grid,
        v_grid,
        levels: opts.levels,
        refine_passes: opts.refine_passes,
        grid_r,
        grid_v,
        grid_rate,
        cutoff_level: levels.cutoff,
        cut_levels: levels.cuts.clone(),
        evaluations,
    });
    Ok(plan)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn geometric_grid_hits_endpoints() {
        let g = geomspace(0.01, 0.9, 12);
        assert_eq!(g.len(), 12);
        assert!((g[0] - 0.01).abs() < 1e-15);
        assert_eq!(g[11], 0.9);
        assert!(g.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn level_ordering() {
        assert!(Levels { cutoff: Some(0.1), cuts: vec![0.2, 0.5] }.ordered());
        assert!(!Levels { cutoff: Some(0.3), cuts: vec![0.2] }.ordered());
        assert!(!Levels { cutoff: None, cuts: vec![1.0] }.ordered());
    }
}
