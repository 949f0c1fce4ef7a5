mod commands;
mod config;
mod output;
mod reproduce;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use config::{Overrides, ScenarioConfig};
use reproduce::Figure;

/// Channel estimation, key rates and cluster optimisation for CV QKD over
/// fading channels.
///
/// Settings come from the `--config` TOML file, then `FADING_CVQKD_*`
/// environment variables, then flags; later layers win.
/// `FADING_CVQKD_THREADS` caps the worker pool.
#[derive(Parser)]
#[command(name = "fading-cvqkd", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Scenario file (TOML).
    #[arg(long, global = true, env = "FADING_CVQKD_CONFIG")]
    config: Option<PathBuf>,
    #[arg(long, global = true, env = "FADING_CVQKD_SEED")]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, env = "FADING_CVQKD_OUT")]
    out: Option<PathBuf>,
    /// Use n = m = 10⁴ and the wide sweep instead of desk-scale defaults.
    #[arg(long, global = true)]
    paper_scale: bool,
    /// Number of clusters C.
    #[arg(long, global = true, env = "FADING_CVQKD_CLUSTERS")]
    clusters: Option<usize>,
    /// Confidence multiplier for parameter bounds.
    #[arg(long, global = true, env = "FADING_CVQKD_Z_CONF")]
    z_conf: Option<f64>,
    /// Fading law: uniform:LO,HI | normal:MEAN,STD | weibull:W/A,SIGMA | fixed:T | trace:CSV | file:JSON.
    #[arg(long, global = true, env = "FADING_CVQKD_DIST")]
    dist: Option<String>,
    /// States per package.
    #[arg(long, global = true, env = "FADING_CVQKD_N")]
    n: Option<usize>,
    /// Number of packages.
    #[arg(long, global = true, env = "FADING_CVQKD_M")]
    m: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a run: run.csv, run.json and true_t.csv.
    Simulate,
    /// Estimate a simulated or recorded run: estimates.csv and aggregate.json.
    Estimate {
        /// Directory holding run.csv and run.json (default: the output directory).
        #[arg(long)]
        run: Option<PathBuf>,
        /// Ignore true transmittances even if present.
        #[arg(long)]
        blind: bool,
    },
    /// Key rate for the configured cluster layout: keyrate.json.
    Keyrate {
        /// Cluster these package estimates instead of using the fading law.
        #[arg(long)]
        estimates: Option<PathBuf>,
        /// Simulate and estimate a run instead of integrating the fading law.
        #[arg(long)]
        monte_carlo: bool,
    },
    /// Optimise r, V and cluster boundaries for C clusters: plan.json.
    Optimize,
    /// Emit the data series for a figure as CSV.
    Reproduce {
        #[arg(value_enum)]
        figure: Figure,
    },
    /// Turn a transmittance trace (CSV with a `T` column) into an empirical law: empirical.json.
    Ingest {
        trace: PathBuf,
        /// Histogram bin width for the density.
        #[arg(long)]
        bin_width: Option<f64>,
    },
}

fn init_threads() -> Result<()> {
    let Ok(raw) = std::env::var("FADING_CVQKD_THREADS") else {
        return Ok(());
    };
    let threads: usize = raw.trim().parse().with_context(|| format!("FADING_CVQKD_THREADS = {raw:?}"))?;
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new().num_threads(threads).build_global()?;
    #[cfg(not(feature = "parallel"))]
    let _ = threads;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    init_threads()?;
    let c = &cli.common;
    let overrides = Overrides {
        seed: c.seed,
        out: c.out.clone(),
        paper_scale: c.paper_scale,
        clusters: c.clusters,
        z_conf: c.z_conf,
        dist: c.dist.clone(),
        n: c.n,
        m: c.m,
    };
    let mut cfg = ScenarioConfig::resolve(c.config.as_deref(), &overrides)?;
    let outputs = match &cli.command {
        Command::Simulate => commands::simulate(&cfg)?,
        Command::Estimate { run, blind } => {
            cfg.blind |= *blind;
            let dir = run.clone().unwrap_or_else(|| cfg.out.clone());
            commands::estimate(&cfg, &dir)?
        }
        Command::Keyrate { estimates, monte_carlo } => {
            if *monte_carlo {
                cfg.mode = config::Mode::MonteCarlo;
            }
            commands::keyrate(&cfg, estimates.as_deref())?
        }
        Command::Optimize => commands::optimize_cmd(&cfg)?,
        Command::Reproduce { figure } => reproduce::run(&cfg, *figure, c.dist.is_some(), c.clusters.is_some())?,
        Command::Ingest { trace, bin_width } => commands::ingest(trace, *bin_width)?,
    };
    for path in outputs.commit(&cfg.out)? {
        info!("wrote {}", path.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
