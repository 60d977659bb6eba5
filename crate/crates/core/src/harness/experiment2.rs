use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{EdgeRow, ExperimentReport, HarnessError, Percentiles};
use crate::auth::{AuthToken, Role};
use crate::federation::{Client, Cluster, FederatedQuery, Topology};
use crate::sdum::{AggKind, MergeableAggregate};

#[derive(Clone, Debug)]
pub struct Experiment2Config {
    pub user_counts: Vec<usize>,
    pub queries_per_user: usize,
    /// One reading per second per leaf.
    pub tuples_per_leaf: usize,
    /// Every `spot_check_every`-th answer is compared with the raw data.
    pub spot_check_every: u64,
    pub deadline: Duration,
    pub seed: u64,
}

impl Default for Experiment2Config {
    fn default() -> Self {
        Experiment2Config {
            user_counts: (1..=10).map(|k| 50 * k).collect(),
            queries_per_user: 10,
            tuples_per_leaf: 3600,
            spot_check_every: 100,
            deadline: Duration::from_secs(5),
            seed: 11,
        }
    }
}

const CAPABILITY: &str = "waiting-time";
const ADMIN: &str = "exp2-admin";
const USER: &str = "exp2-user";
/// Leaves first, root last; core counts are kept as labels only.
const NODES: [(&str, Option<&str>, &str); 3] = [
    ("azure-1", Some("google"), "4 cores"),
    ("azure-2", Some("google"), "2 cores"),
    ("google", None, "2 cores"),
];
const WINDOWS_MS: [Option<u64>; 4] = [None, Some(60_000), Some(300_000), Some(1_800_000)];

fn leaf_data(seed: u64, n: usize) -> Vec<(u64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v = 15.0f64;
    (0..n)
        .map(|i| {
            v = (v + rng.random_range(-1.0..1.0)).clamp(0.0, 90.0);
            (i as u64 * 1000, v)
        })
        .collect()
}

fn oracle(data: &[Vec<(u64, f64)>], kind: AggKind, window: Option<u64>, as_of: u64) -> MergeableAggregate {
    let mut agg = MergeableAggregate::empty(kind);
    for &(ts, v) in data.iter().flatten() {
        let inside = window.is_none_or(|w| ts >= as_of.saturating_sub(w) && ts <= as_of);
        if inside {
            agg.push(ts, v);
        }
    }
    agg
}

fn agrees(got: &MergeableAggregate, want: &MergeableAggregate) -> bool {
    match (got.value(), want.value()) {
        (None, None) => true,
        (Some(a), Some(b)) => got.count == want.count && (a - b).abs() <= 1e-9 * b.abs().max(1.0),
        _ => false,
    }
}

#[derive(Default)]
struct Tally {
    latencies_ms: Vec<f64>,
    errors: u64,
    wrong: u64,
    checked: u64,
    complete: u64,
    answers: u64,
    first_error: Option<String>,
}

/// Closed-loop load on the root of a two-leaf tree: each user issues a
/// query, waits for the answer, then issues the next.
pub fn run_experiment2(cfg: &Experiment2Config) -> Result<ExperimentReport, HarnessError> {
    let mut report = ExperimentReport::new("experiment2");
    let users: Vec<String> = cfg.user_counts.iter().map(usize::to_string).collect();
    report.param("user_counts", users.join(" "));
    report.param("queries_per_user", cfg.queries_per_user);
    report.param("tuples_per_leaf", cfg.tuples_per_leaf);
    report.param("spot_check_every", cfg.spot_check_every);
    report.param("deadline_ms", cfg.deadline.as_millis());
    report.param("seed", cfg.seed);
    report.param("load_model", "closed-loop");
    let labels: Vec<String> = NODES.iter().map(|(id, _, cores)| format!("{id}={cores}")).collect();
    report.param("nodes", labels.join(" "));
    report.columns = ["users", "queries", "errors", "wrong", "spot_checked", "complete", "p50_ms", "p95_ms", "p99_ms", "max_ms"]
        .map(String::from)
        .to_vec();
    if cfg.user_counts.is_empty() {
        return Ok(report);
    }
    if cfg.spot_check_every == 0 {
        return Err(HarnessError::Failed("spot_check_every must be positive".into()));
    }

    let tokens = [AuthToken::new(ADMIN, Role::Admin), AuthToken::new(USER, Role::Consumer)];
    let shape: Vec<(&str, Option<&str>)> = NODES.iter().map(|&(id, p, _)| (id, p)).collect();
    let topology = Topology::from_parents(&shape, &tokens)?;
    let cluster = Cluster::launch(&topology)?;
    let data: Vec<Vec<(u64, f64)>> = NODES[..2]
        .iter()
        .enumerate()
        .map(|(i, (id, _, _))| {
            let rows = leaf_data(cfg.seed.wrapping_add(i as u64), cfg.tuples_per_leaf);
            cluster.node(id).ingest_values(CAPABILITY, &rows);
            rows
        })
        .collect();
    let as_of = cfg.tuples_per_leaf.saturating_sub(1) as u64 * 1000;
    let root = cluster.get("google").expect("root exists").address();

    let mut all_latencies = Vec::new();
    let sequence = AtomicU64::new(0);
    for &u in &cfg.user_counts {
        let tally = Mutex::new(Tally::default());
        std::thread::scope(|scope| {
            for user in 0..u {
                let (tally, data, sequence) = (&tally, &data, &sequence);
                scope.spawn(move || {
                    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ ((u as u64) << 32) ^ user as u64);
                    let mut local = Tally::default();
                    let fail = |local: &mut Tally, why: String| {
                        local.errors += 1;
                        local.first_error.get_or_insert(why);
                    };
                    let mut client = match Client::connect(root, USER) {
                        Ok(c) => c,
                        Err(e) => {
                            for _ in 0..cfg.queries_per_user {
                                fail(&mut local, format!("connect: {e}"));
                            }
                            tally.lock().expect("tally poisoned").absorb(local);
                            return;
                        }
                    };
                    for _ in 0..cfg.queries_per_user {
                        let kind = AggKind::ALL[rng.random_range(0..AggKind::ALL.len())];
                        let window = WINDOWS_MS[rng.random_range(0..WINDOWS_MS.len())];
                        let mut q = FederatedQuery::new(CAPABILITY, kind).deadline(cfg.deadline);
                        if let Some(w) = window {
                            q = q.window(w, Some(as_of));
                        }
                        let started = Instant::now();
                        let result = client.query(&q);
                        let elapsed = started.elapsed().as_secs_f64() * 1000.0;
                        match result {
                            Ok(ans) => {
                                local.latencies_ms.push(elapsed);
                                local.answers += 1;
                                if ans.complete {
                                    local.complete += 1;
                                }
                                let n = sequence.fetch_add(1, Ordering::Relaxed);
                                if n % cfg.spot_check_every == 0 {
                                    local.checked += 1;
                                    let want = oracle(data, kind, window, as_of);
                                    if !ans.complete || !agrees(&ans.aggregate, &want) {
                                        // A wrong answer counts as an error, not as a latency sample.
                                        local.latencies_ms.pop();
                                        local.wrong += 1;
                                        fail(&mut local, format!("{kind} over {window:?}: got {:?}, want {:?}", ans.value(), want.value()));
                                    }
                                }
                            }
                            Err(e) => fail(&mut local, e.to_string()),
                        }
                    }
                    tally.lock().expect("tally poisoned").absorb(local);
                });
            }
        });
        let t = tally.into_inner().expect("tally poisoned");
        let p = Percentiles::of(&t.latencies_ms);
        let ms = |f: fn(&Percentiles) -> f64| p.as_ref().map_or(String::new(), |p| format!("{:.3}", f(p)));
        report.rows.push(vec![
            u.to_string(),
            (u * cfg.queries_per_user).to_string(),
            t.errors.to_string(),
            t.wrong.to_string(),
            t.checked.to_string(),
            t.complete.to_string(),
            ms(|p| p.p50),
            ms(|p| p.p95),
            ms(|p| p.p99),
            ms(|p| p.max),
        ]);
        report.errors += t.errors;
        report.completeness.0 += t.complete;
        report.completeness.1 += t.answers;
        if let Some(e) = t.first_error {
            report.notes.push(format!("{u} users: {e}"));
        }
        all_latencies.extend(t.latencies_ms);
    }
    report.latency = Percentiles::of(&all_latencies);
    for node in cluster.nodes() {
        for ((from, to), e) in node.measure_edge_traffic() {
            report.edges.push(EdgeRow {
                from: from.to_string(),
                to: to.to_string(),
                tuples: e.tuples,
                bytes: e.bytes,
            });
        }
    }
    cluster.shutdown();
    if report.errors > 0 {
        return Err(HarnessError::Failed(format!("{} failed or wrong queries; {}", report.errors, report.notes.join("; "))));
    }
    Ok(report)
}

impl Tally {
    fn absorb(&mut self, other: Tally) {
        self.latencies_ms.extend(other.latencies_ms);
        self.errors += other.errors;
        self.wrong += other.wrong;
        self.checked += other.checked;
        self.complete += other.complete;
        self.answers += other.answers;
        if self.first_error.is_none() {
            self.first_error = other.first_error;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_load_is_exact() {
        let cfg = Experiment2Config {
            user_counts: vec![4, 8],
            queries_per_user: 5,
            tuples_per_leaf: 600,
            spot_check_every: 1,
            ..Default::default()
        };
        let r = run_experiment2(&cfg).unwrap();
        assert_eq!(r.values("queries"), vec!["20", "40"]);
        assert_eq!(r.values("spot_checked"), vec!["20", "40"]);
        assert_eq!(r.latency.unwrap().count, 60);
        assert_eq!(r.completeness, (60, 60));
        let p = r.latency.unwrap();
        assert!(p.p50 <= p.p95 && p.p95 <= p.p99);
        // Two answered edges per query.
        let tuples: u64 = r.edges.iter().map(|e| e.tuples).sum();
        assert_eq!(tuples, 120);
    }

    #[test]
    fn no_users_no_rows() {
        let cfg = Experiment2Config {
            user_counts: vec![],
            ..Default::default()
        };
        assert!(run_experiment2(&cfg).unwrap().rows.is_empty());
    }
}
