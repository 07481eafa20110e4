//! Result rows and the three output formats, each opened by a provenance header.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::ExperimentConfig;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Which way a metric is compared against its tolerance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Bound {
    #[serde(rename = "<=")]
    AtMost,
    #[serde(rename = ">=")]
    AtLeast,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRow {
    pub experiment: String,
    /// Parameter tuple as `name=value` pairs joined by `;`.
    pub params: String,
    pub metric: String,
    pub value: f64,
    pub tolerance: f64,
    pub bound: Bound,
    pub pass: bool,
    pub version: &'static str,
    pub config_hash: String,
}

/// Shared by every file written for one run.
#[derive(Debug, Clone, Serialize)]
pub struct Provenance {
    pub tool: &'static str,
    pub version: &'static str,
    pub experiment: String,
    pub subcommand: String,
    pub config_hash: String,
    pub grid: String,
    pub dt: f64,
    /// The full resolved config, defaults included.
    pub config: String,
}

impl Provenance {
    pub fn new(cfg: &ExperimentConfig, subcommand: &str) -> Self {
        let g = &cfg.geometry;
        Provenance {
            tool: "mkdv-lab",
            version: VERSION,
            experiment: experiment_id(cfg, subcommand),
            subcommand: subcommand.to_string(),
            config_hash: cfg.hash(),
            grid: format!("{:?} period={} n={}", g.kind, g.period, g.n).to_lowercase(),
            dt: cfg.flow.dt,
            config: cfg.to_toml(),
        }
    }

    pub fn row(&self, params: &str, metric: &str, value: f64, tolerance: f64, bound: Bound) -> ResultRow {
        let pass = value.is_finite()
            && match bound {
                Bound::AtMost => value <= tolerance,
                Bound::AtLeast => value >= tolerance,
            };
        ResultRow {
            experiment: self.experiment.clone(),
            params: params.to_string(),
            metric: metric.to_string(),
            value,
            tolerance,
            bound,
            pass,
            version: VERSION,
            config_hash: self.config_hash.clone(),
        }
    }

    /// Header lines for text formats, each prefixed by `prefix`.
    fn header(&self, prefix: &str) -> String {
        let mut s = format!(
            "{prefix}{} {} experiment={} subcommand={}\n{prefix}config_hash={}\n{prefix}grid: {}\n{prefix}dt={}\n",
            self.tool, self.version, self.experiment, self.subcommand, self.config_hash, self.grid, self.dt
        );
        for line in self.config.lines() {
            s.push_str(prefix);
            s.push_str("  ");
            s.push_str(line);
            s.push('\n');
        }
        s
    }

    pub fn path(&self, dir: &Path, suffix: &str) -> PathBuf {
        dir.join(format!("{}_{suffix}", self.experiment))
    }
}

pub fn experiment_id(cfg: &ExperimentConfig, subcommand: &str) -> String {
    cfg.id.clone().unwrap_or_else(|| subcommand.replace('-', "_"))
}

pub fn write_csv(path: &Path, prov: &Provenance, rows: &[ResultRow]) -> io::Result<()> {
    let mut file = fs::File::create(path)?;
    file.write_all(prov.header("# ").as_bytes())?;
    let mut w = csv::Writer::from_writer(file);
    for r in rows {
        w.serialize(r).map_err(io::Error::other)?;
    }
    w.flush()
}

/// A CSV table with free-form numeric columns, used for per-time and
/// per-parameter series.
pub fn write_table(path: &Path, prov: &Provenance, columns: &[&str], data: &[Vec<f64>]) -> io::Result<()> {
    let mut file = fs::File::create(path)?;
    file.write_all(prov.header("# ").as_bytes())?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(columns).map_err(io::Error::other)?;
    for row in data {
        w.write_record(row.iter().map(|v| format!("{v:e}"))).map_err(io::Error::other)?;
    }
    w.flush()
}

pub fn write_json<T: Serialize>(path: &Path, prov: &Provenance, body: &T) -> io::Result<()> {
    #[derive(Serialize)]
    struct Doc<'a, T> {
        provenance: &'a Provenance,
        report: &'a T,
    }
    let text = serde_json::to_string_pretty(&Doc { provenance: prov, report: body }).map_err(io::Error::other)?;
    fs::write(path, text + "\n")
}

/// Gnuplot-style two-column text; blocks are separated by a blank line.
pub fn write_plot(path: &Path, prov: &Provenance, blocks: &[(String, Vec<(f64, f64)>)]) -> io::Result<()> {
    let mut s = prov.header("# ");
    for (i, (label, pts)) in blocks.iter().enumerate() {
        if i > 0 {
            s.push_str("\n\n");
        }
        s.push_str(&format!("# {label}\n"));
        for (x, y) in pts {
            s.push_str(&format!("{x:e} {y:e}\n"));
        }
    }
    fs::write(path, s)
}
