//! Scenario configuration.
//!
//! Values are resolved in three layers: the TOML file given with `--config`,
//! then `FADING_CVQKD_*` environment variables, then command-line flags.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use fading_cvqkd::clustering::OptimizeOptions;
use fading_cvqkd::io::load_empirical;
use fading_cvqkd::{ClusterLayout, ProtocolParams, TransmittanceDistribution};
use serde::{Deserialize, Serialize};

/// Fading law as written in a config file or on the command line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DistSpec {
    Uniform { lo: f64, hi: f64 },
    TruncatedNormal { mean: f64, std: f64 },
    Weibull { w_over_a: f64, sigma_b: f64 },
    Fixed { t: f64 },
    /// CSV trace with a `T` column.
    Trace {
        path: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        bin_width: Option<f64>,
    },
    /// Distribution JSON written by `ingest`.
    File { path: PathBuf },
}

impl Default for DistSpec {
    fn default() -> Self {
        DistSpec::TruncatedNormal { mean: 0.5, std: 0.1 }
    }
}

impl DistSpec {
    /// Parses `kind:args`, e.g. `uniform:0,1`, `normal:0.5,0.1`,
    /// `weibull:1.25,0.8`, `fixed:0.5`, `trace:path.csv`, `file:law.json`.
    pub fn parse(s: &str) -> Result<Self> {
        let (kind, args) = s.split_once(':').unwrap_or((s, ""));
        let nums = || -> Result<Vec<f64>> {
            args.split(',')
                .map(|a| a.trim().parse::<f64>().with_context(|| format!("bad number {a:?} in --dist {s:?}")))
                .collect()
        };
        let two = |v: Vec<f64>| -> Result<(f64, f64)> {
            match v[..] {
                [a, b] => Ok((a, b)),
                _ => bail!("--dist {s:?} needs two numbers"),
            }
        };
        Ok(match kind {
            "uniform" => {
                let (lo, hi) = two(nums()?)?;
                DistSpec::Uniform { lo, hi }
            }
            "normal" | "truncated_normal" => {
                let (mean, std) = two(nums()?)?;
                DistSpec::TruncatedNormal { mean, std }
            }
            "weibull" => {
                let (w_over_a, sigma_b) = two(nums()?)?;
                DistSpec::Weibull { w_over_a, sigma_b }
            }
            "fixed" => match nums()?[..] {
                [t] => DistSpec::Fixed { t },
                _ => bail!("--dist {s:?} needs one number"),
            },
            "trace" => DistSpec::Trace { path: args.into(), bin_width: None },
            "file" => DistSpec::File { path: args.into() },
            _ => bail!("unknown distribution kind {kind:?} (uniform, normal, weibull, fixed, trace, file)"),
        })
    }

    pub fn build(&self) -> Result<TransmittanceDistribution> {
        let d = match self {
            DistSpec::Uniform { lo, hi } => TransmittanceDistribution::uniform(*lo, *hi)?,
            DistSpec::TruncatedNormal { mean, std } => TransmittanceDistribution::truncated_normal(*mean, *std)?,
            DistSpec::Weibull { w_over_a, sigma_b } => {
                TransmittanceDistribution::log_negative_weibull(*w_over_a, *sigma_b)?
            }
            DistSpec::Fixed { t } => TransmittanceDistribution::fixed(*t)?,
            DistSpec::Trace { path, bin_width } => {
                load_empirical(path, *bin_width).with_context(|| format!("loading trace {}", path.display()))?
            }
            DistSpec::File { path } => fading_cvqkd::io::read_json(path)
                .with_context(|| format!("loading distribution {}", path.display()))?,
        };
        d.validate()?;
        Ok(d)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Key rates from the fading law by quadrature.
    #[default]
    Analytic,
    /// Key rates from simulated (or supplied) package estimates.
    MonteCarlo,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LayoutSpec {
    pub cutoff: Option<f64>,
    pub cuts: Vec<f64>,
}

impl LayoutSpec {
    pub fn build(&self) -> Result<ClusterLayout> {
        Ok(ClusterLayout::new(self.cutoff, self.cuts.clone())?)
    }
}

/// Package sizes and total state counts swept by `reproduce`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Sweep {
    pub package_sizes: Vec<usize>,
    pub total_states: Vec<f64>,
    pub max_clusters: usize,
}

impl Default for Sweep {
    fn default() -> Self {
        Sweep {
            package_sizes: vec![100, 1000],
            total_states: vec![1e4, 3e4, 1e5, 3e5, 1e6, 3e6, 1e7, 3e7, 1e8],
            max_clusters: 3,
        }
    }
}

impl Sweep {
    fn paper() -> Self {
        Sweep {
            package_sizes: vec![1000, 10_000, 100_000],
            total_states: (10..=20).map(|i| 10f64.powf(i as f64 / 2.0)).collect(),
            max_clusters: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub dist: DistSpec,
    pub protocol: ProtocolParams,
    /// States per package.
    pub n: usize,
    /// Number of packages.
    pub m: usize,
    pub clusters: usize,
    pub seed: u64,
    /// Do not read true transmittances when estimating.
    pub blind: bool,
    pub mode: Mode,
    pub paper_scale: bool,
    pub layout: LayoutSpec,
    pub sweep: Sweep,
    pub optimizer: OptimizeOptions,
    #[serde(skip)]
    pub out: PathBuf,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            dist: DistSpec::default(),
            protocol: ProtocolParams::default(),
            n: 1000,
            m: 1000,
            clusters: 0,
            seed: 1,
            blind: false,
            mode: Mode::default(),
            paper_scale: false,
            layout: LayoutSpec::default(),
            sweep: Sweep::default(),
            optimizer: OptimizeOptions::default(),
            out: PathBuf::from("out"),
        }
    }
}

/// Overrides taken from the environment or flags; `None` leaves the value.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub paper_scale: bool,
    pub clusters: Option<usize>,
    pub z_conf: Option<f64>,
    pub dist: Option<String>,
    pub n: Option<usize>,
    pub m: Option<usize>,
}

impl ScenarioConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg: ScenarioConfig = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        // Relative trace paths are taken from the config's directory.
        if let Some(dir) = path.parent() {
            match &mut cfg.dist {
                DistSpec::Trace { path, .. } | DistSpec::File { path } if path.is_relative() => {
                    *path = dir.join(&*path);
                }
                _ => {}
            }
        }
        Ok(cfg)
    }

    pub fn resolve(file: Option<&Path>, o: &Overrides) -> Result<Self> {
        let mut cfg = match file {
            Some(p) => Self::from_file(p)?,
            None => Self::default(),
        };
        if o.paper_scale {
            cfg.paper_scale = true;
        }
        if cfg.paper_scale {
            cfg.n = 10_000;
            cfg.m = 10_000;
            cfg.sweep = Sweep::paper();
        }
        if let Some(s) = o.seed {
            cfg.seed = s;
        }
        if let Some(p) = &o.out {
            cfg.out = p.clone();
        }
        if let Some(c) = o.clusters {
            cfg.clusters = c;
        }
        if let Some(z) = o.z_conf {
            cfg.protocol.z_conf = z;
        }
        if let Some(d) = &o.dist {
            cfg.dist = DistSpec::parse(d)?;
        }
        if let Some(n) = o.n {
            cfg.n = n;
        }
        if let Some(m) = o.m {
            cfg.m = m;
        }
        cfg.protocol.validate()?;
        if cfg.n < 2 || cfg.m < 1 {
            bail!("need n ≥ 2 and m ≥ 1 (got n = {}, m = {})", cfg.n, cfg.m);
        }
        Ok(cfg)
    }
}
