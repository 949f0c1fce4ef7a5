//! CSV and JSON exchange formats.
//!
//! * runs: `package,j,M,B` plus a JSON sidecar ([`RunMeta`]);
//! * true transmittances: `package,T_true`;
//! * estimates: `package,sqrtT_hat,T_hat,sigma_sqrtT,sigma_T,vN_hat,k`;
//! * transmittance traces: a single `T` column.
//!
//! Floats are written in shortest round-trip form, so a write/read cycle is
//! lossless and identical inputs give identical bytes.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::channel::{Package, ProtocolParams, Run};
use crate::distributions::{Empirical, TransmittanceDistribution};
use crate::error::{Error, Result};
use crate::estimation::PackageEstimate;

/// Everything about a run except the quadrature data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub n: usize,
    pub m: usize,
    pub protocol: ProtocolParams,
    pub dist: TransmittanceDistribution,
    pub seed: u64,
}

impl RunMeta {
    pub fn of(run: &Run) -> Self {
        RunMeta {
            n: run.n,
            m: run.packages.len(),
            protocol: run.protocol,
            dist: run.dist.clone(),
            seed: run.seed,
        }
    }
}

fn csv_writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w)
}

fn parse_err(path: &str, line: u64, msg: impl Into<String>) -> Error {
    Error::Parse { path: path.to_string(), line, msg: msg.into() }
}

/// A CSV table with its header resolved to the requested columns.
struct Table<R: Read> {
    reader: csv::Reader<R>,
    path: String,
    columns: Vec<usize>,
}

impl<R: Read> Table<R> {
    fn open(r: R, path: &str, wanted: &[&str]) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(r);
        let header = reader
            .headers()
            .map_err(|e| parse_err(path, 1, e.to_string()))?
            .clone();
        if header.is_empty() || (header.len() == 1 && header[0].is_empty()) {
            return Err(parse_err(path, 1, "missing header"));
        }
        let columns = wanted
            .iter()
            .map(|w| {
                header
                    .iter()
                    .position(|h| h == *w)
                    .ok_or_else(|| parse_err(path, 1, format!("missing column `{w}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Table { reader, path: path.to_string(), columns })
    }

    /// Calls `f(line, fields)` for every data row.
    fn rows(&mut self, mut f: impl FnMut(u64, &[&str]) -> Result<()>) -> Result<()> {
        let mut record = csv::StringRecord::new();
        loop {
            match self.reader.read_record(&mut record) {
                Ok(false) => return Ok(()),
                Ok(true) => {
                    let line = record.position().map_or(0, |p| p.line());
                    let fields = self
                        .columns
                        .iter()
                        .map(|&c| record.get(c).ok_or_else(|| parse_err(&self.path, line, "short row")))
                        .collect::<Result<Vec<_>>>()?;
                    f(line, &fields)?;
                }
                Err(e) => {
                    let line = e.position().map_or(0, |p| p.line());
                    return Err(parse_err(&self.path, line, e.to_string()));
                }
            }
        }
    }
}

fn num<T: std::str::FromStr>(path: &str, line: u64, col: &str, s: &str) -> Result<T> {
    s.parse()
        .map_err(|_| parse_err(path, line, format!("column `{col}`: cannot parse `{s}`")))
}

fn finite(path: &str, line: u64, col: &str, s: &str) -> Result<f64> {
    let x: f64 = num(path, line, col, s)?;
    if x.is_finite() {
        Ok(x)
    } else {
        Err(parse_err(path, line, format!("column `{col}`: non-finite value `{s}`")))
    }
}

fn open(path: &Path) -> Result<File> {
    Ok(File::open(path)?)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

pub fn write_run_csv<W: Write>(run: &Run, w: W) -> Result<()> {
    let mut out = csv_writer(w);
    out.write_record(["package", "j", "M", "B"])?;
    for (i, p) in run.packages.iter().enumerate() {
        for (j, (m, b)) in p.m.iter().zip(&p.b).enumerate() {
            out.write_record([i.to_string(), j.to_string(), m.to_string(), b.to_string()])?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn write_true_t_csv<W: Write>(run: &Run, w: W) -> Result<()> {
    let mut out = csv_writer(w);
    out.write_record(["package", "T_true"])?;
    for (i, p) in run.packages.iter().enumerate() {
        out.write_record([i.to_string(), p.true_t.to_string()])?;
    }
    out.flush()?;
    Ok(())
}

/// Write `run.csv`, `run.json` and `true_t.csv` into `dir`.
pub fn write_run_files(run: &Run, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_run_csv(run, create(&dir.join("run.csv"))?)?;
    write_true_t_csv(run, create(&dir.join("true_t.csv"))?)?;
    write_json(&RunMeta::of(run), &dir.join("run.json"))
}

/// Read a run; true transmittances are unknown (`NaN`) unless `true_t` is
/// given.
pub fn read_run(csv_path: &Path, meta_path: &Path, true_t: Option<&Path>) -> Result<Run> {
    let meta: RunMeta = read_json(meta_path)?;
    let name = csv_path.display().to_string();
    let mut table = Table::open(open(csv_path)?, &name, &["package", "j", "M", "B"])?;
    let mut packages: Vec<Package> = Vec::with_capacity(meta.m);
    table.rows(|line, f| {
        let i: usize = num(&name, line, "package", f[0])?;
        let j: usize = num(&name, line, "j", f[1])?;
        let m = finite(&name, line, "M", f[2])?;
        let b = finite(&name, line, "B", f[3])?;
        if i == packages.len() && j == 0 {
            packages.push(Package { true_t: f64::NAN, m: Vec::with_capacity(meta.n), b: Vec::with_capacity(meta.n) });
        }
        let count = packages.len();
        match packages.last_mut() {
            Some(p) if i + 1 == count && j == p.m.len() => {
                p.m.push(m);
                p.b.push(b);
                Ok(())
            }
            _ => Err(parse_err(&name, line, format!("expected rows in order, found package {i} row {j}"))),
        }
    })?;
    if packages.len() != meta.m {
        return Err(parse_err(&name, 0, format!("expected {} packages, found {}", meta.m, packages.len())));
    }
    if let Some(i) = packages.iter().position(|p| p.m.len() != meta.n) {
        return Err(parse_err(&name, 0, format!("package {i} has {} rows, expected {}", packages[i].m.len(), meta.n)));
    }
    if let Some(path) = true_t {
        let ts = read_true_t(path)?;
        if ts.len() != packages.len() {
            return Err(parse_err(
                &path.display().to_string(),
                0,
                format!("expected {} values, found {}", packages.len(), ts.len()),
            ));
        }
        for (p, t) in packages.iter_mut().zip(ts) {
            p.true_t = t;
        }
    }
    Ok(Run { packages, dist: meta.dist, protocol: meta.protocol, seed: meta.seed, n: meta.n })
}

pub fn read_true_t(path: &Path) -> Result<Vec<f64>> {
    let name = path.display().to_string();
    let mut table = Table::open(open(path)?, &name, &["package", "T_true"])?;
    let mut out = Vec::new();
    table.rows(|line, f| {
        let i: usize = num(&name, line, "package", f[0])?;
        if i != out.len() {
            return Err(parse_err(&name, line, format!("expected package {}, found {i}", out.len())));
        }
        out.push(finite(&name, line, "T_true", f[1])?);
        Ok(())
    })?;
    Ok(out)
}

pub fn write_estimates_csv<W: Write>(estimates: &[PackageEstimate], w: W) -> Result<()> {
    let mut out = csv_writer(w);
    out.write_record(["package", "sqrtT_hat", "T_hat", "sigma_sqrtT", "sigma_T", "vN_hat", "k"])?;
    for (i, e) in estimates.iter().enumerate() {
        out.write_record([
            i.to_string(),
            e.sqrt_t_hat.to_string(),
            e.t_hat.to_string(),
            e.sigma_sqrt_t.to_string(),
            e.sigma_t.to_string(),
            e.vn_hat.to_string(),
            e.k.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Read estimates back. `ε̂` is recomputed from `V_S`, as it is not stored.
pub fn read_estimates(path: &Path, v_s: f64) -> Result<Vec<PackageEstimate>> {
    let name = path.display().to_string();
    let cols = ["package", "sqrtT_hat", "T_hat", "sigma_sqrtT", "sigma_T", "vN_hat", "k"];
    let mut table = Table::open(open(path)?, &name, &cols)?;
    let mut out = Vec::new();
    table.rows(|line, f| {
        let i: usize = num(&name, line, "package", f[0])?;
        if i != out.len() {
            return Err(parse_err(&name, line, format!("expected package {}, found {i}", out.len())));
        }
        let mut x = [0.0; 5];
        for (c, v) in x.iter_mut().enumerate() {
            *v = finite(&name, line, cols[c + 1], f[c + 1])?;
        }
        let t_hat = x[1];
        out.push(PackageEstimate {
            sqrt_t_hat: x[0],
            t_hat,
            sigma_sqrt_t: x[2],
            sigma_t: x[3],
            vn_hat: x[4],
            eps_hat: x[4] - 1.0 + t_hat * (1.0 - v_s),
            k: num(&name, line, "k", f[6])?,
        });
        Ok(())
    })?;
    Ok(out)
}

/// Read a transmittance trace (column `T`, values in `[0, 1]`).
pub fn read_trace(path: &Path) -> Result<Vec<f64>> {
    let name = path.display().to_string();
    read_trace_from(open(path)?, &name)
}

pub fn read_trace_from<R: Read>(r: R, name: &str) -> Result<Vec<f64>> {
    let mut table = Table::open(r, name, &["T"])?;
    let mut out = Vec::new();
    table.rows(|line, f| {
        let t = finite(name, line, "T", f[0])?;
        if !(0.0..=1.0).contains(&t) {
            return Err(parse_err(name, line, format!("T = {t} is outside [0, 1]")));
        }
        out.push(t);
        Ok(())
    })?;
    if out.is_empty() {
        return Err(parse_err(name, 1, "no data rows"));
    }
    Ok(out)
}

/// Empirical distribution from a trace file.
pub fn load_empirical(path: &Path, bin_width: Option<f64>) -> Result<TransmittanceDistribution> {
    Ok(TransmittanceDistribution::Empirical(Empirical::new(read_trace(path)?, bin_width)?))
}

/// Pretty JSON with a trailing newline.
pub fn to_json_string<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut w = create(path)?;
    w.write_all(to_json_string(value)?.as_bytes())?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(std::io::BufReader::new(open(path)?))?)
}
