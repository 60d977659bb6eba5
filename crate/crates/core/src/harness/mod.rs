//! Experiment drivers and their reports.
//!
//! Reports are a CSV table with the parameters echoed as `# key=value`
//! comment lines, plus a plain-text summary. Anything host-dependent
//! (latencies, CPU, memory) is kept out of the deterministic experiments so
//! their reports are byte-identical across runs.

mod case_study;
mod experiment1;
mod experiment2;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

pub use case_study::{run_case_study, CaseStudyConfig};
pub use experiment1::{run_experiment1, Experiment1Config};
pub use experiment2::{run_experiment2, Experiment2Config};

use crate::federation::{FederationError, TopologyError};
use crate::ingestion::IngestError;
use crate::store::Iri;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("{sensors} sensor(s): {} tuple(s) lost ({})", lost.values().sum::<u64>(), describe_loss(lost))]
    Loss { sensors: usize, lost: BTreeMap<Iri, u64> },
    #[error("experiment failed: {0}")]
    Failed(String),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Federation(#[from] FederationError),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn describe_loss(lost: &BTreeMap<Iri, u64>) -> String {
    let parts: Vec<String> = lost.iter().filter(|(_, &n)| n > 0).map(|(s, n)| format!("{s}: {n}")).collect();
    parts.join(", ")
}

/// Nearest-rank percentiles over a full latency multiset, in milliseconds.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Percentiles {
    pub count: usize,
    pub p50: f64,
    pub p95: f64,
    pub p99: f64,
    pub mean: f64,
    pub max: f64,
}

impl Percentiles {
    /// `None` for an empty sample.
    pub fn of(samples_ms: &[f64]) -> Option<Self> {
        if samples_ms.is_empty() {
            return None;
        }
        let mut v = samples_ms.to_vec();
        v.sort_by(f64::total_cmp);
        let rank = |p: f64| {
            let r = (p / 100.0 * v.len() as f64).ceil() as usize;
            v[r.clamp(1, v.len()) - 1]
        };
        Some(Percentiles {
            count: v.len(),
            p50: rank(50.0),
            p95: rank(95.0),
            p99: rank(99.0),
            mean: v.iter().sum::<f64>() / v.len() as f64,
            max: v[v.len() - 1],
        })
    }
}

/// Tuples and bytes over one directed edge, summed over a run.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EdgeRow {
    pub from: String,
    pub to: String,
    pub tuples: u64,
    pub bytes: u64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ExperimentReport {
    pub experiment: String,
    pub parameters: Vec<(String, String)>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
    pub edges: Vec<EdgeRow>,
    pub latency: Option<Percentiles>,
    pub errors: u64,
    /// Answers with every child in, out of all answers checked.
    pub completeness: (u64, u64),
    pub metric_csv: Vec<PathBuf>,
    pub notes: Vec<String>,
}

impl ExperimentReport {
    pub fn new(experiment: &str) -> Self {
        ExperimentReport {
            experiment: experiment.to_string(),
            ..Default::default()
        }
    }

    pub fn param(&mut self, key: &str, value: impl ToString) {
        self.parameters.push((key.to_string(), value.to_string()));
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// Values of one column, in row order.
    pub fn values(&self, name: &str) -> Vec<&str> {
        let Some(i) = self.column(name) else { return Vec::new() };
        self.rows.iter().map(|r| r[i].as_str()).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("# experiment={}\n", self.experiment);
        for (k, v) in &self.parameters {
            let _ = writeln!(out, "# {k}={v}");
        }
        if !self.columns.is_empty() {
            out.push_str(&self.columns.join(","));
            out.push('\n');
        }
        for r in &self.rows {
            out.push_str(&r.join(","));
            out.push('\n');
        }
        out
    }

    pub fn summary(&self) -> String {
        let mut out = format!("experiment {}\n", self.experiment);
        for (k, v) in &self.parameters {
            let _ = writeln!(out, "  {k}: {v}");
        }
        let _ = writeln!(out, "rows: {}", self.rows.len());
        let _ = writeln!(out, "errors: {}", self.errors);
        if self.completeness.1 > 0 {
            let _ = writeln!(out, "complete answers: {}/{}", self.completeness.0, self.completeness.1);
        }
        if let Some(p) = self.latency {
            let _ = writeln!(
                out,
                "latency ms over {} queries: p50 {:.3} p95 {:.3} p99 {:.3} mean {:.3} max {:.3}",
                p.count, p.p50, p.p95, p.p99, p.mean, p.max
            );
        }
        if !self.edges.is_empty() {
            out.push_str("edge traffic:\n");
            for e in &self.edges {
                let _ = writeln!(out, "  {} -> {}: {} tuples, {} bytes", e.from, e.to, e.tuples, e.bytes);
            }
        }
        for p in &self.metric_csv {
            let _ = writeln!(out, "metrics: {}", p.display());
        }
        for n in &self.notes {
            let _ = writeln!(out, "note: {n}");
        }
        out
    }

    /// Writes `<experiment>.csv` and `<experiment>.txt` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(PathBuf, PathBuf), HarnessError> {
        std::fs::create_dir_all(dir)?;
        let csv = dir.join(format!("{}.csv", self.experiment));
        let txt = dir.join(format!("{}.txt", self.experiment));
        std::fs::write(&csv, self.to_csv())?;
        std::fs::write(&txt, self.summary())?;
        Ok((csv, txt))
    }
}
