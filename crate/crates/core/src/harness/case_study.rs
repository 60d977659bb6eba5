use std::fmt::Write as _;
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{EdgeRow, ExperimentReport, HarnessError};
use crate::federation::{Cluster, FederatedQuery, Topology};
use crate::sdum::{AggKind, MergeableAggregate};

/// Three park leaves replaying waiting times under one root.
#[derive(Clone, Debug)]
pub struct CaseStudyConfig {
    /// Replay files, the topology file and metric exports are written here.
    pub dir: PathBuf,
    /// Readings per park, one per second.
    pub tuples: [usize; 3],
    /// Tuples per pushed aggregate.
    pub window: usize,
    /// Spacing of the continuous windowed queries, in milliseconds.
    pub step_ms: u64,
    pub seed: u64,
}

impl CaseStudyConfig {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        CaseStudyConfig {
            dir: dir.into(),
            tuples: [3600, 2700, 1800],
            window: 300,
            step_ms: 300_000,
            seed: 5,
        }
    }
}

const PARKS: [&str; 3] = ["US", "UK", "AU"];
const ROOT: &str = "global";
const CAPABILITY: &str = "waiting-time";
const TOKEN: &str = "park-admin";

fn replay(seed: u64, n: usize, base: f64) -> Vec<(u64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            // Queues build up towards midday and drain again.
            let hour = (i as f64 / 3600.0) * std::f64::consts::PI;
            let v = base + 10.0 * hour.sin() + rng.random_range(0.0..5.0);
            (i as u64 * 1000, (v * 100.0).round() / 100.0)
        })
        .collect()
}

fn topology_text() -> String {
    let mut t = String::new();
    let children: Vec<String> = PARKS.iter().map(|p| format!("\"{p}\"")).collect();
    let _ = writeln!(
        t,
        "[[node]]\nid = \"{ROOT}\"\naddress = \"127.0.0.1:0\"\nrole = \"root\"\nchildren = [{}]\ntokens = [{{ token = \"{TOKEN}\", role = \"admin\" }}]\n",
        children.join(", ")
    );
    for p in PARKS {
        let _ = writeln!(
            t,
            "[[node]]\nid = \"{p}\"\naddress = \"127.0.0.1:0\"\nrole = \"leaf\"\ntokens = [{{ token = \"{TOKEN}\", role = \"admin\" }}]\n[[node.service]]\ncapability = \"{CAPABILITY}\"\nreplay = \"{p}.csv\"\n"
        );
    }
    t
}

fn naive_mean(parts: &[MergeableAggregate]) -> f64 {
    let means: Vec<f64> = parts.iter().filter_map(MergeableAggregate::value).collect();
    means.iter().sum::<f64>() / means.len() as f64
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * b.abs().max(1.0)
}

/// Federated averages over the parks, checked against the replay files,
/// followed by a windowed push that shows the per-edge reduction.
pub fn run_case_study(cfg: &CaseStudyConfig) -> Result<ExperimentReport, HarnessError> {
    if cfg.window == 0 || cfg.step_ms == 0 {
        return Err(HarnessError::Failed("window and step must be positive".into()));
    }
    let mut report = ExperimentReport::new("case-study");
    let tuples: Vec<String> = cfg.tuples.iter().map(usize::to_string).collect();
    report.param("parks", PARKS.join(" "));
    report.param("tuples", tuples.join(" "));
    report.param("window", cfg.window);
    report.param("step_ms", cfg.step_ms);
    report.param("seed", cfg.seed);
    report.columns = ["check", "federated", "oracle", "mean_of_means", "completeness", "ok"].map(String::from).to_vec();

    std::fs::create_dir_all(&cfg.dir)?;
    let mut data = Vec::new();
    for (i, park) in PARKS.iter().enumerate() {
        let rows = replay(cfg.seed.wrapping_add(i as u64), cfg.tuples[i], 20.0 + 10.0 * i as f64);
        let mut text = String::from("timestamp_ms,value\n");
        for (ts, v) in &rows {
            let _ = writeln!(text, "{ts},{v}");
        }
        std::fs::write(cfg.dir.join(format!("{park}.csv")), text)?;
        data.push(rows);
    }
    let topo_path = cfg.dir.join("case-study.toml");
    std::fs::write(&topo_path, topology_text())?;
    let cluster = Cluster::launch(&Topology::load(&topo_path)?)?;
    let root = cluster.node(ROOT);
    let mut failures = Vec::new();
    let mut check = |report: &mut ExperimentReport, name: String, q: &FederatedQuery, parts: Vec<MergeableAggregate>| -> Result<(), HarnessError> {
        let ans = root.execute(q, Some(TOKEN))?;
        let want = parts.iter().try_fold(MergeableAggregate::empty(q.kind), |a, p| a.merge(p)).expect("one kind");
        let (got, exp) = (ans.value().unwrap_or(f64::NAN), want.value().unwrap_or(f64::NAN));
        let ok = ans.complete && ans.aggregate.count == want.count && close(got, exp);
        if !ok {
            failures.push(name.clone());
        }
        report.rows.push(vec![name, got.to_string(), exp.to_string(), naive_mean(&parts).to_string(), ans.completeness(), ok.to_string()]);
        report.completeness.1 += 1;
        report.completeness.0 += u64::from(ans.complete);
        Ok(())
    };

    // Constant streams: equal counts, then unequal counts.
    for (name, counts, values) in [("equal-counts", [10usize, 10, 10], [10.0, 20.0, 30.0]), ("unequal-counts", [100, 200, 300], [1.0, 2.0, 3.0])] {
        let mut parts = Vec::new();
        for (i, park) in PARKS.iter().enumerate() {
            let rows: Vec<(u64, f64)> = (0..counts[i]).map(|k| (k as u64 * 1000, values[i])).collect();
            cluster.node(park).ingest_values(name, &rows);
            parts.push(MergeableAggregate::of_values(AggKind::Avg, &vec![values[i]; counts[i]]));
        }
        check(&mut report, name.to_string(), &FederatedQuery::new(name, AggKind::Avg), parts)?;
    }

    let parts_in = |from: u64, to: u64| -> Vec<MergeableAggregate> {
        data.iter()
            .map(|rows| {
                let mut a = MergeableAggregate::empty(AggKind::Avg);
                for &(ts, v) in rows.iter().filter(|(ts, _)| (from..=to).contains(ts)) {
                    a.push(ts, v);
                }
                a
            })
            .collect()
    };
    check(&mut report, "replay-all".into(), &FederatedQuery::new(CAPABILITY, AggKind::Avg), parts_in(0, u64::MAX))?;
    // The continuous view: one windowed average per step.
    let horizon = cfg.tuples.iter().max().copied().unwrap_or(0) as u64 * 1000;
    let mut as_of = cfg.step_ms;
    while as_of <= horizon {
        let q = FederatedQuery::new(CAPABILITY, AggKind::Avg).window(cfg.step_ms, Some(as_of));
        check(&mut report, format!("window@{as_of}"), &q, parts_in(as_of - cfg.step_ms, as_of))?;
        as_of += cfg.step_ms;
    }

    // Push windows of raw data up the tree and compare per-edge volumes.
    cluster.reset_traffic();
    let mut inputs = Vec::new();
    for park in PARKS {
        inputs.push((park, cluster.node(park).stream_up(CAPABILITY, cfg.window, AggKind::Avg)?));
    }
    let pushed = root
        .push_result(CAPABILITY)
        .ok_or_else(|| HarnessError::Failed("nothing reached the root".into()))?;
    let parts = parts_in(0, u64::MAX);
    let want = parts.iter().try_fold(MergeableAggregate::empty(AggKind::Avg), |a, p| a.merge(p)).expect("one kind");
    let (got, exp) = (pushed.aggregate.value().unwrap_or(f64::NAN), want.value().unwrap_or(f64::NAN));
    let ok = pushed.complete && pushed.aggregate.count == want.count && close(got, exp);
    if !ok {
        failures.push("push".into());
    }
    report.rows.push(vec!["push".into(), got.to_string(), exp.to_string(), naive_mean(&parts).to_string(), String::new(), ok.to_string()]);
    let traffic = root.measure_edge_traffic();
    for (park, sent) in inputs {
        let e = traffic
            .iter()
            .find(|((from, _), _)| from.as_str() == park)
            .map(|(_, e)| *e)
            .unwrap_or_default();
        let expected = sent.input.div_ceil(cfg.window as u64);
        let factor = sent.input as f64 / e.tuples.max(1) as f64;
        report.notes.push(format!("{park}: {} readings -> {} uplink tuples, reduction x{factor}", sent.input, e.tuples));
        if e.tuples != expected {
            failures.push(format!("edge {park}: {} uplink tuples, expected {expected}", e.tuples));
        }
        report.edges.push(EdgeRow {
            from: park.to_string(),
            to: ROOT.to_string(),
            tuples: e.tuples,
            bytes: e.bytes,
        });
    }
    cluster.shutdown();
    if !failures.is_empty() {
        return Err(HarnessError::Failed(format!("case study mismatches: {}", failures.join(", "))));
    }
    Ok(report)
}
