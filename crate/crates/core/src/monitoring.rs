//! Per-component metrics: logical counters plus process CPU/RSS samples.
//!
//! Counters are plain atomics handed out once and bumped without locking.
//! CPU and memory come from `/proc/self` and are process-wide, so every
//! component's sample carries the same host figures; only the counters are
//! component-specific.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use crate::node::NodeId;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Component {
    Store,
    Query,
    Ingest,
    Scheduler,
    Sdum,
    Federation,
}

impl Component {
    pub const ALL: [Component; 6] = [
        Component::Store,
        Component::Query,
        Component::Ingest,
        Component::Scheduler,
        Component::Sdum,
        Component::Federation,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Component::Store => "store",
            Component::Query => "query",
            Component::Ingest => "ingest",
            Component::Scheduler => "scheduler",
            Component::Sdum => "sdum",
            Component::Federation => "federation",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum MonitorError {
    #[error("unknown component `{0}`")]
    UnknownComponent(String),
    #[error("bad metrics file line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl FromStr for Component {
    type Err = MonitorError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Component::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| MonitorError::UnknownComponent(s.to_string()))
    }
}

/// Cheap handle to one counter.
#[derive(Clone, Debug, Default)]
pub struct Counter(Arc<AtomicU64>);

impl Counter {
    pub fn add(&self, n: u64) {
        self.0.fetch_add(n, Ordering::Relaxed);
    }

    pub fn incr(&self) {
        self.add(1);
    }

    pub fn get(&self) -> u64 {
        self.0.load(Ordering::Relaxed)
    }
}

/// Named counters for each component of one node.
#[derive(Debug)]
pub struct Metrics {
    node: NodeId,
    counters: [Mutex<BTreeMap<String, Counter>>; 6],
}

impl Metrics {
    pub fn new(node: NodeId) -> Arc<Self> {
        Arc::new(Metrics {
            node,
            counters: Default::default(),
        })
    }

    pub fn node(&self) -> &NodeId {
        &self.node
    }

    /// Returns the counter, creating it at zero on first use. Names must
    /// not contain commas or line breaks (they become CSV columns).
    pub fn counter(&self, component: Component, name: &str) -> Counter {
        assert!(
            !name.is_empty() && !name.contains([',', '\n', '\r']),
            "bad counter name {name:?}"
        );
        let mut map = self.counters[component.index()].lock().expect("metrics poisoned");
        map.entry(name.to_string()).or_default().clone()
    }

    pub fn read(&self, component: Component) -> BTreeMap<String, u64> {
        let map = self.counters[component.index()].lock().expect("metrics poisoned");
        map.iter().map(|(k, v)| (k.clone(), v.get())).collect()
    }

    pub fn value(&self, component: Component, name: &str) -> u64 {
        let map = self.counters[component.index()].lock().expect("metrics poisoned");
        map.get(name).map_or(0, Counter::get)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricSample {
    pub node: NodeId,
    pub component: Component,
    pub ts_ms: u64,
    pub cpu_pct: f64,
    pub rss_bytes: u64,
    pub counters: BTreeMap<String, u64>,
}

// Linux defaults; /proc exposes no way to read them without libc.
const CLOCK_TICKS_PER_SEC: f64 = 100.0;
const PAGE_SIZE: u64 = 4096;

fn process_cpu_ticks() -> Option<u64> {
    let stat = std::fs::read_to_string("/proc/self/stat").ok()?;
    // The command name may contain spaces; fields resume after the last ')'.
    let rest = &stat[stat.rfind(')')? + 2..];
    let fields: Vec<&str> = rest.split_whitespace().collect();
    let utime: u64 = fields.get(11)?.parse().ok()?;
    let stime: u64 = fields.get(12)?.parse().ok()?;
    Some(utime + stime)
}

fn process_rss_bytes() -> u64 {
    std::fs::read_to_string("/proc/self/statm")
        .ok()
        .and_then(|s| s.split_whitespace().nth(1)?.parse::<u64>().ok())
        .map_or(0, |pages| pages * PAGE_SIZE)
}

pub fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as u64)
}

struct CpuState {
    ticks: u64,
    at: Instant,
}

/// Collects samples for one node and keeps the history.
pub struct Monitor {
    metrics: Arc<Metrics>,
    history: Mutex<Vec<MetricSample>>,
    cpu: Mutex<Option<CpuState>>,
}

impl Monitor {
    pub fn new(metrics: Arc<Metrics>) -> Arc<Self> {
        Arc::new(Monitor {
            metrics,
            history: Mutex::new(Vec::new()),
            cpu: Mutex::new(None),
        })
    }

    pub fn metrics(&self) -> &Arc<Metrics> {
        &self.metrics
    }

    fn cpu_pct(&self) -> f64 {
        let Some(ticks) = process_cpu_ticks() else {
            return 0.0;
        };
        let now = Instant::now();
        let mut state = self.cpu.lock().expect("monitor poisoned");
        let pct = match &*state {
            Some(prev) => {
                let secs = now.duration_since(prev.at).as_secs_f64();
                if secs > 0.0 {
                    (ticks.saturating_sub(prev.ticks) as f64 / CLOCK_TICKS_PER_SEC) / secs * 100.0
                } else {
                    0.0
                }
            }
            None => 0.0,
        };
        *state = Some(CpuState { ticks, at: now });
        pct
    }

    /// Takes one sample per component, stamped `ts_ms`, and records them.
    pub fn sample_at(&self, ts_ms: u64) -> Vec<MetricSample> {
        let cpu_pct = self.cpu_pct();
        let rss_bytes = process_rss_bytes();
        let samples: Vec<MetricSample> = Component::ALL
            .into_iter()
            .map(|component| MetricSample {
                node: self.metrics.node.clone(),
                component,
                ts_ms,
                cpu_pct,
                rss_bytes,
                counters: self.metrics.read(component),
            })
            .collect();
        self.history
            .lock()
            .expect("monitor poisoned")
            .extend(samples.iter().cloned());
        samples
    }

    pub fn sample(&self) -> Vec<MetricSample> {
        self.sample_at(now_ms())
    }

    /// Recorded samples of `component` with `from <= ts_ms <= to`, in time order.
    pub fn series(&self, component: Component, window: Option<(u64, u64)>) -> Vec<MetricSample> {
        let history = self.history.lock().expect("monitor poisoned");
        let mut out: Vec<MetricSample> = history
            .iter()
            .filter(|s| s.component == component)
            .filter(|s| window.is_none_or(|(from, to)| (from..=to).contains(&s.ts_ms)))
            .cloned()
            .collect();
        out.sort_by_key(|s| s.ts_ms);
        out
    }

    /// Same as [`Monitor::series`] but takes the component by name.
    pub fn series_named(&self, component: &str, window: Option<(u64, u64)>) -> Result<Vec<MetricSample>, MonitorError> {
        Ok(self.series(component.parse()?, window))
    }

    pub fn history(&self) -> Vec<MetricSample> {
        self.history.lock().expect("monitor poisoned").clone()
    }

    pub fn export_csv(&self, path: impl AsRef<Path>) -> Result<(), MonitorError> {
        let file = std::fs::File::create(path)?;
        let mut out = std::io::BufWriter::new(file);
        write_csv(&self.history(), &mut out)?;
        out.flush()?;
        Ok(())
    }

    /// Samples every `interval` on a background thread until the handle is stopped.
    pub fn spawn_sampler(self: &Arc<Self>, interval: Duration) -> Sampler {
        let stop = Arc::new(AtomicBool::new(false));
        let monitor = Arc::clone(self);
        let flag = Arc::clone(&stop);
        let thread = std::thread::spawn(move || {
            while !flag.load(Ordering::Relaxed) {
                monitor.sample();
                let until = Instant::now() + interval;
                while !flag.load(Ordering::Relaxed) && Instant::now() < until {
                    std::thread::sleep(interval.min(Duration::from_millis(20)));
                }
            }
        });
        Sampler {
            stop,
            thread: Some(thread),
        }
    }
}

pub struct Sampler {
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl Sampler {
    pub fn stop(mut self) {
        self.halt();
    }

    fn halt(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for Sampler {
    fn drop(&mut self) {
        self.halt();
    }
}

pub fn write_csv(samples: &[MetricSample], out: &mut impl Write) -> std::io::Result<()> {
    let names: BTreeSet<&str> = samples
        .iter()
        .flat_map(|s| s.counters.keys().map(String::as_str))
        .collect();
    write!(out, "node,component,ts_ms,cpu_pct,rss_bytes")?;
    for n in &names {
        write!(out, ",{n}")?;
    }
    writeln!(out)?;
    for s in samples {
        write!(out, "{},{},{},{},{}", s.node, s.component, s.ts_ms, s.cpu_pct, s.rss_bytes)?;
        for n in &names {
            match s.counters.get(*n) {
                Some(v) => write!(out, ",{v}")?,
                None => write!(out, ",")?,
            }
        }
        writeln!(out)?;
    }
    Ok(())
}

pub fn read_csv(input: impl BufRead) -> Result<Vec<MetricSample>, MonitorError> {
    let mut lines = input.lines();
    let bad = |line: usize, message: &str| MonitorError::Parse {
        line,
        message: message.to_string(),
    };
    let header = lines.next().ok_or_else(|| bad(1, "missing header"))??;
    let columns: Vec<&str> = header.split(',').collect();
    if columns.len() < 5 || columns[..5] != ["node", "component", "ts_ms", "cpu_pct", "rss_bytes"] {
        return Err(bad(1, "unexpected header"));
    }
    let counter_names = &columns[5..];
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let line = line?;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != columns.len() {
            return Err(bad(line_no, "wrong number of fields"));
        }
        let num = |s: &str| s.parse::<u64>().map_err(|e| bad(line_no, &e.to_string()));
        let mut counters = BTreeMap::new();
        for (name, value) in counter_names.iter().zip(&fields[5..]) {
            if !value.is_empty() {
                counters.insert(name.to_string(), num(value)?);
            }
        }
        out.push(MetricSample {
            node: NodeId::new(fields[0]).map_err(|e| bad(line_no, &e.to_string()))?,
            component: fields[1].parse()?,
            ts_ms: num(fields[2])?,
            cpu_pct: fields[3].parse().map_err(|_| bad(line_no, "bad cpu_pct"))?,
            rss_bytes: num(fields[4])?,
            counters,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn monitor() -> Arc<Monitor> {
        Monitor::new(Metrics::new(NodeId::new("n1").unwrap()))
    }

    #[test]
    fn idle_node_ten_samples() {
        let m = monitor();
        m.metrics().counter(Component::Ingest, "tuples").add(7);
        for t in 0..10 {
            m.sample_at(t * 1000);
        }
        for c in Component::ALL {
            let series = m.series(c, None);
            assert_eq!(series.len(), 10);
            assert!(series.iter().all(|s| s.cpu_pct >= 0.0));
        }
        let ingest = m.series(Component::Ingest, None);
        assert!(ingest.iter().all(|s| s.counters["tuples"] == 7));
        assert_eq!(m.series(Component::Ingest, Some((2000, 4000))).len(), 3);
    }

    #[test]
    fn unknown_component() {
        let m = monitor();
        assert!(matches!(
            m.series_named("gpu", None),
            Err(MonitorError::UnknownComponent(_))
        ));
        assert!(m.series_named("sdum", None).unwrap().is_empty());
    }

    #[test]
    fn csv_round_trip() {
        let m = monitor();
        let tuples = m.metrics().counter(Component::Ingest, "tuples");
        m.metrics().counter(Component::Sdum, "delivered").add(3);
        for t in 0..4 {
            tuples.add(5);
            m.sample_at(t);
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        m.export_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("node,component,ts_ms,cpu_pct,rss_bytes,delivered,tuples\n"));
        let back = read_csv(std::io::BufReader::new(std::fs::File::open(&path).unwrap())).unwrap();
        assert_eq!(back, m.history());
    }

    #[test]
    fn counters_are_monotone_under_sampling() {
        let m = monitor();
        let c = m.metrics().counter(Component::Federation, "frames");
        let sampler = m.spawn_sampler(Duration::from_millis(5));
        for _ in 0..2000 {
            c.incr();
        }
        std::thread::sleep(Duration::from_millis(30));
        sampler.stop();
        let series = m.series(Component::Federation, None);
        assert!(!series.is_empty());
        let values: Vec<u64> = series.iter().map(|s| s.counters.get("frames").copied().unwrap_or(0)).collect();
        assert!(values.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn host_figures_present_on_linux() {
        if cfg!(target_os = "linux") {
            assert!(process_rss_bytes() > 0);
            assert!(process_cpu_ticks().is_some());
        }
    }
}
