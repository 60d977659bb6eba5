//! End-to-end acceptance checks. Runs as a plain binary so every check
//! prints exactly one PASS/FAIL line, even when an earlier one fails.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use hierion::auth::{AuthToken, Role};
use hierion::federation::wire::{read_frame, Frame};
use hierion::federation::{Client, Cluster, FederatedQuery, Topology, REQUEST_TYPES};
use hierion::harness::{run_experiment1, run_experiment2, Experiment1Config, Experiment2Config};
use hierion::node::NodeId;
use hierion::osdspec::{parse_osdspec, parse_osdspec_bytes, serialize_osdspec, validate, OsdSpec};
use hierion::registry::{Registry, SensorDescription};
use hierion::sdum::{AggKind, MergeableAggregate};
use hierion::sparql::{self, GeoPoint};
use hierion::store::{GraphId, Iri, Pattern, Store, Term, Triple};
use hierion::vocab::SSN_SENSOR;

const DISCOVERY: &str = include_str!("fixtures/device_discovery.rq");
const SERVICE_SPEC: &str = include_str!("fixtures/service_spec.xml");

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1000.0
}

// Independent of the crate's geo code on purpose.
fn great_circle_km(lon1: f64, lat1: f64, lon2: f64, lat2: f64) -> f64 {
    let (p1, p2) = (lat1.to_radians(), lat2.to_radians());
    let dp = p2 - p1;
    let dl = (lon2 - lon1).to_radians();
    let a = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * 6371.0088 * a.sqrt().atan2((1.0 - a).sqrt())
}

fn offset(lon: f64, lat: f64, km: f64, bearing: f64) -> (f64, f64) {
    let d = km / 6371.0088;
    let (p1, l1) = (lat.to_radians(), lon.to_radians());
    let p2 = (p1.sin() * d.cos() + p1.cos() * d.sin() * bearing.cos()).asin();
    let l2 = l1 + (bearing.sin() * d.sin() * p1.cos()).atan2(d.cos() - p1.sin() * p2.sin());
    (l2.to_degrees(), p2.to_degrees())
}

fn golden_discovery() -> Outcome {
    const LON: f64 = 6.635227203369141;
    const LAT: f64 = 46.52119378179781;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let reg = Registry::new(Arc::new(Store::new()));
    let mut coords = Vec::new();
    for i in 0..20 {
        // Five well inside the 15 km disc, the rest well outside it.
        let km = if i < 5 { rng.random_range(0.2..14.0) } else { rng.random_range(16.5..90.0) };
        let (lon, lat) = offset(LON, LAT, km, rng.random_range(0.0..std::f64::consts::TAU));
        let id = format!("http://demo.org/sensor/s{i:02}");
        reg.register_sensor(&SensorDescription {
            id: Iri::new(&id).unwrap(),
            label: format!("station {i}"),
            sensor_type: Iri::new("http://demo.org/ns#TestType").unwrap(),
            type_parents: vec![Iri::new(SSN_SENSOR).unwrap()],
            observed_properties: [Iri::new("http://demo.org/ns#temperature").unwrap()].into(),
            location: Some(GeoPoint::new(lon, lat).map_err(|e| e.to_string())?),
            owner_node: NodeId::new("gw").unwrap(),
        })
        .map_err(|e| e.to_string())?;
        coords.push((id, lon, lat));
    }
    let oracle: BTreeSet<String> =
        coords.iter().filter(|(_, lon, lat)| great_circle_km(LON, LAT, *lon, *lat) <= 15.0).map(|c| c.0.clone()).collect();
    let started = Instant::now();
    let rows = sparql::run(DISCOVERY, reg.store()).map_err(|e| e.to_string())?;
    let took = started.elapsed();
    let got: BTreeSet<String> = rows
        .column("graphNode_2197552479500_sensorId")
        .iter()
        .filter_map(|t| t.as_iri().map(|i| i.as_str().to_string()))
        .collect();
    ensure(oracle.len() == 5, || format!("oracle found {} sensors", oracle.len()))?;
    ensure(got == oracle, || format!("got {got:?}, oracle {oracle:?}"))?;
    ensure(took < Duration::from_secs(1), || format!("took {:.1} ms", ms(took)))?;
    Ok(format!("{} of 20 sensors, matches haversine oracle, {:.2} ms", got.len(), ms(took)))
}

fn golden_service_description() -> Outcome {
    let spec = parse_osdspec(SERVICE_SPEC).map_err(|e| e.to_string())?;
    ensure(validate(&spec).is_empty(), || "fixture has diagnostics".into())?;
    ensure(spec.oamos.len() == 1 && spec.oamos[0].name == "name0", || "OAMO structure".into())?;
    let osmo = &spec.oamos[0].osmos[0];
    ensure(spec.oamos[0].osmos.len() == 1 && osmo.name == "name1", || "OSMO structure".into())?;
    ensure(!osmo.query_controls.report_if_empty, || "reportIfEmpty".into())?;
    ensure(osmo.request_presentation.len() == 2, || "widget count".into())?;
    let attrs: Vec<(&str, &str)> = osmo
        .request_presentation
        .iter()
        .flat_map(|w| w.attributes.iter().map(|(k, v)| (k.as_str(), v.as_str())))
        .collect();
    ensure(
        attrs == [("name2", "value0"), ("name3", "value1"), ("name4", "value2"), ("name5", "value3")],
        || format!("attributes {attrs:?}"),
    )?;
    ensure(osmo.query_requests == ["query0", "query1"], || format!("queries {:?}", osmo.query_requests))?;
    let again = parse_osdspec(&serialize_osdspec(&spec)).map_err(|e| format!("re-parse: {e}"))?;
    ensure(again == spec, || "round trip changed the structure".into())?;

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let seed = SERVICE_SPEC.as_bytes();
    let mut accepted = 0;
    for i in 0..100_000 {
        let input: Vec<u8> = if i % 2 == 0 {
            let mut b = vec![0u8; rng.random_range(0..512)];
            rng.fill_bytes(&mut b);
            b
        } else {
            // Mutations of the real document reach deeper into the parser.
            let mut b = seed.to_vec();
            for _ in 0..rng.random_range(1..8) {
                let at = rng.random_range(0..b.len());
                match rng.random_range(0..3) {
                    0 => b[at] = rng.random(),
                    1 => b.truncate(at.max(1)),
                    _ => b.insert(at, rng.random()),
                }
            }
            b
        };
        let r = catch_unwind(|| parse_osdspec_bytes(&input));
        match r {
            Ok(Ok(_)) => accepted += 1,
            Ok(Err(_)) => {}
            Err(_) => return Err(format!("parser panicked on input {i}: {:?}", String::from_utf8_lossy(&input))),
        }
    }
    Ok(format!("structure and round trip ok; 100000 fuzz inputs, no crash ({accepted} accepted)"))
}

fn experiment1() -> Outcome {
    let cfg = Experiment1Config {
        sensor_counts: vec![10],
        ..Default::default()
    };
    let r = run_experiment1(&cfg).map_err(|e| e.to_string())?;
    let get = |c: &str| r.values(c)[0].parse::<u64>().unwrap();
    let (streams, emitted, delivered, lost) = (get("streams"), get("emitted"), get("delivered"), get("lost"));
    ensure(streams == 50, || format!("{streams} streams"))?;
    ensure(emitted == 3000 && delivered == 3000 && lost == 0, || format!("emitted {emitted}, delivered {delivered}, lost {lost}"))?;
    ensure(get("ingest_counter") == delivered && get("sdum_delivered") == delivered, || "counters disagree".into())?;
    ensure(get("samples_per_component") >= 60, || "missing metric samples".into())?;
    Ok(format!("{streams} streams, {delivered} delivered, 0 lost, counters agree, {} samples per component", get("samples_per_component")))
}

fn experiment2() -> Outcome {
    let r = run_experiment2(&Experiment2Config::default()).map_err(|e| e.to_string())?;
    let p = r.latency.ok_or("no latencies")?;
    let checked: u64 = r.values("spot_checked").iter().map(|v| v.parse::<u64>().unwrap()).sum();
    let wrong: u64 = r.values("wrong").iter().map(|v| v.parse::<u64>().unwrap()).sum();
    ensure(r.errors == 0 && wrong == 0, || format!("{} errors, {wrong} wrong", r.errors))?;
    ensure(checked > 0, || "nothing spot-checked".into())?;
    let detail = format!(
        "{} queries, 0 errors, {checked} spot checks exact; p50 {:.2} ms p95 {:.2} ms p99 {:.2} ms (reference cloud figure ~400-450 ms)",
        p.count, p.p50, p.p95, p.p99
    );
    ensure(p.p99 < 250.0, || format!("p99 over budget: {detail}"))?;
    Ok(detail)
}

struct RandomTree {
    shape: Vec<(String, Option<String>)>,
    leaves: BTreeMap<String, Vec<(u64, f64)>>,
}

fn random_tree(rng: &mut ChaCha8Rng) -> RandomTree {
    let n = rng.random_range(2..=10);
    let mut depth = vec![0usize];
    let mut shape = vec![("n0".to_string(), None)];
    for i in 1..n {
        let candidates: Vec<usize> = (0..i).filter(|&p| depth[p] < 3).collect();
        let p = candidates[rng.random_range(0..candidates.len())];
        depth.push(depth[p] + 1);
        shape.push((format!("n{i}"), Some(format!("n{p}"))));
    }
    let parents: HashSet<&str> = shape.iter().filter_map(|(_, p)| p.as_deref()).collect();
    let leaf_ids: Vec<String> = shape.iter().map(|(id, _)| id.clone()).filter(|id| !parents.contains(id.as_str())).collect();
    let total = rng.random_range(0..=100_000usize);
    let mut cuts: Vec<usize> = (0..leaf_ids.len() - 1).map(|_| rng.random_range(0..=total)).collect();
    cuts.push(0);
    cuts.push(total);
    cuts.sort_unstable();
    let mut leaves = BTreeMap::new();
    for (i, id) in leaf_ids.into_iter().enumerate() {
        let len = cuts[i + 1] - cuts[i];
        // Quarter steps keep every partial sum exact in f64.
        let rows = (0..len).map(|k| (k as u64 * 1000, rng.random_range(-400..400) as f64 / 4.0)).collect();
        leaves.insert(id, rows);
    }
    RandomTree { shape, leaves }
}

fn launch(tree: &RandomTree, tokens: &[AuthToken]) -> Result<Cluster, String> {
    let shape: Vec<(&str, Option<&str>)> = tree.shape.iter().map(|(id, p)| (id.as_str(), p.as_deref())).collect();
    let topo = Topology::from_parents(&shape, tokens).map_err(|e| e.to_string())?;
    let cluster = Cluster::launch(&topo).map_err(|e| e.to_string())?;
    for (id, rows) in &tree.leaves {
        cluster.node(id).ingest_values("w", rows);
    }
    Ok(cluster)
}

fn flat(values: impl Iterator<Item = f64>) -> (f64, u64, f64, f64) {
    values.fold((0.0, 0, f64::INFINITY, f64::NEG_INFINITY), |(s, c, lo, hi), v| (s + v, c + 1, lo.min(v), hi.max(v)))
}

const TREES: usize = 200;

fn tokens() -> Vec<AuthToken> {
    vec![AuthToken::new("acc-admin", Role::Admin), AuthToken::new("acc-user", Role::Consumer)]
}

fn hierarchical_exactness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let started = Instant::now();
    let (mut tuples, mut queries) = (0usize, 0usize);
    for t in 0..TREES {
        let tree = random_tree(&mut rng);
        let cluster = launch(&tree, &tokens())?;
        let mut client = Client::connect(cluster.get("n0").unwrap().address(), "acc-user").map_err(|e| e.to_string())?;
        let horizon = tree.leaves.values().map(Vec::len).max().unwrap_or(0) as u64 * 1000;
        let as_of = rng.random_range(0..=horizon);
        let window = rng.random_range(1..=horizon.max(1));
        for (windowed, kind) in AggKind::ALL.iter().flat_map(|&k| [(false, k), (true, k)]) {
            let mut q = FederatedQuery::new("w", kind).deadline(Duration::from_secs(10));
            if windowed {
                q = q.window(window, Some(as_of));
            }
            let ans = client.query(&q).map_err(|e| format!("tree {t}: {e}"))?;
            queries += 1;
            let inside = |ts: u64| !windowed || (ts + window >= as_of && ts <= as_of);
            let (sum, count, lo, hi) = flat(tree.leaves.values().flatten().filter(|(ts, _)| inside(*ts)).map(|r| r.1));
            let want = match (count, kind) {
                (0, _) => None,
                (_, AggKind::Avg) => Some(sum / count as f64),
                (_, AggKind::Sum) => Some(sum),
                (_, AggKind::Count) => Some(count as f64),
                (_, AggKind::Min) => Some(lo),
                (_, AggKind::Max) => Some(hi),
            };
            let ok = ans.complete
                && ans.aggregate.count == count
                && match (ans.value(), want) {
                    (None, None) => true,
                    (Some(g), Some(w)) if kind == AggKind::Avg => (g - w).abs() <= 1e-9 * w.abs().max(f64::MIN_POSITIVE),
                    (Some(g), Some(w)) => g == w,
                    _ => false,
                };
            ensure(ok, || {
                format!("tree {t} {:?} {kind} windowed={windowed}: got {:?} ({}), want {want:?}", tree.shape, ans.value(), ans.completeness())
            })?;
        }
        tuples += tree.leaves.values().map(Vec::len).sum::<usize>();
        cluster.shutdown();
    }
    let took = started.elapsed();
    ensure(took < Duration::from_secs(60), || format!("took {:.1} s", took.as_secs_f64()))?;
    Ok(format!("{TREES} trees, {tuples} tuples, {queries} queries equal the flat oracle in {:.1} s", took.as_secs_f64()))
}

fn bandwidth_reduction() -> Outcome {
    const W: u64 = 300;
    // One 1 Hz stream for five minutes becomes one tuple.
    let single = RandomTree {
        shape: vec![("n0".into(), None), ("n1".into(), Some("n0".into()))],
        leaves: [("n1".to_string(), (0..300).map(|k| (k * 1000, 1.0)).collect())].into(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let trees: Vec<RandomTree> = std::iter::once(single).chain((0..TREES).map(|_| random_tree(&mut rng))).collect();
    let (mut edges, mut raw, mut uplink) = (0usize, 0u64, 0u64);
    for (t, tree) in trees.iter().enumerate() {
        let cluster = launch(tree, &tokens())?;
        for id in tree.leaves.keys() {
            cluster.node(id).stream_up("w", W as usize, AggKind::Avg).map_err(|e| format!("tree {t}: {e}"))?;
        }
        // Tuples over each edge, read at the receiving end.
        let mut out_of: BTreeMap<&str, u64> = BTreeMap::new();
        for (id, parent) in &tree.shape {
            if let Some(p) = parent {
                let traffic = cluster.node(p).measure_edge_traffic();
                let key = (NodeId::new(id).unwrap(), NodeId::new(p).unwrap());
                out_of.insert(id, traffic.get(&key).map_or(0, |e| e.tuples));
            }
        }
        for (id, parent) in &tree.shape {
            let Some(_) = parent else { continue };
            let input = match tree.leaves.get(id) {
                Some(rows) => rows.len() as u64,
                None => tree.shape.iter().filter(|(_, p)| p.as_deref() == Some(id)).map(|(c, _)| out_of[c.as_str()]).sum(),
            };
            let sent = out_of[id.as_str()];
            ensure(sent == input.div_ceil(W), || format!("tree {t} edge {id}: {sent} tuples from {input} in"))?;
            ensure(sent <= input, || format!("tree {t} edge {id}: grew from {input} to {sent}"))?;
            edges += 1;
            if tree.leaves.contains_key(id) {
                raw += input;
            }
            if parent.as_deref() == Some("n0") {
                uplink += sent;
            }
        }
        let total: u64 = tree.leaves.values().map(|r| r.len() as u64).sum();
        let res = cluster.node("n0").push_result("w").ok_or_else(|| format!("tree {t}: nothing reached the root"))?;
        ensure(res.complete && res.aggregate.count == total, || format!("tree {t}: root holds {} of {total}", res.aggregate.count))?;
        if t == 0 {
            ensure(out_of["n1"] == 1, || format!("300 readings became {} tuples", out_of["n1"]))?;
        }
        cluster.shutdown();
    }
    Ok(format!(
        "{edges} edges over {} trees carry ceil(input/{W}); {raw} raw tuples reach the roots as {uplink}",
        trees.len()
    ))
}

fn triple_store_scale() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let graph = GraphId::parse("urn:acc:g").unwrap();
    let preds: Vec<Iri> = (0..40).map(|i| Iri::new(format!("urn:acc:p{i}")).unwrap()).collect();
    let triple = |rng: &mut ChaCha8Rng| {
        let s = Term::iri(format!("urn:acc:s{}", rng.random_range(0..100_000))).unwrap();
        let p = preds[rng.random_range(0..preds.len())].clone();
        let o = if rng.random_bool(0.5) {
            Term::iri(format!("urn:acc:o{}", rng.random_range(0..50_000))).unwrap()
        } else {
            Term::literal(rng.random_range(0..1_000_000).to_string())
        };
        Triple::new(s, p, o).unwrap()
    };
    let store = Store::new();
    let mut kept = Vec::new();
    let started = Instant::now();
    while store.count(&graph) < 1_000_000 {
        let need = 1_000_000 - store.count(&graph);
        let batch: Vec<Triple> = (0..need.min(100_000)).map(|_| triple(&mut rng)).collect();
        if kept.len() < 10_000 {
            kept.extend(batch.iter().take(10_000 - kept.len()).cloned());
        }
        store.insert(&graph, &batch).map_err(|e| e.to_string())?;
    }
    let load = started.elapsed();

    let anchored = |rng: &mut ChaCha8Rng, t: &Triple| {
        let (s, p, o) = (Some(t.subject.clone()), Some(t.predicate.clone()), Some(t.object.clone()));
        match rng.random_range(0..6) {
            0 => Pattern::new(s, None, None),
            1 => Pattern::new(s, p, None),
            2 => Pattern::new(None, p, o),
            3 => Pattern::new(None, None, o),
            4 => Pattern::new(s, None, o),
            _ => Pattern::new(s, p, o),
        }
    };
    let mut worst = Duration::ZERO;
    let mut results = 0usize;
    for _ in 0..1000 {
        let pick = rng.random_range(0..kept.len());
        let pat = anchored(&mut rng, &kept[pick]);
        let t0 = Instant::now();
        let found = store.match_pattern(&graph, &pat);
        let took = t0.elapsed();
        worst = worst.max(took);
        results += found.len();
        ensure(!found.is_empty(), || format!("{pat:?} found nothing"))?;
        ensure(took < Duration::from_millis(100), || format!("{pat:?} took {:.1} ms", ms(took)))?;
    }

    // Set equality against a linear scan on a subsample.
    let sub = Store::new();
    sub.insert(&graph, &kept).map_err(|e| e.to_string())?;
    let unique: HashSet<&Triple> = kept.iter().collect();
    for _ in 0..1000 {
        let pick = rng.random_range(0..kept.len());
        let pat = anchored(&mut rng, &kept[pick]);
        let got: HashSet<Triple> = sub.match_pattern(&graph, &pat).into_iter().collect();
        let want: HashSet<Triple> = unique
            .iter()
            .filter(|t| {
                pat.subject.as_ref().is_none_or(|s| s == &t.subject)
                    && pat.predicate.as_ref().is_none_or(|p| p == &t.predicate)
                    && pat.object.as_ref().is_none_or(|o| o == &t.object)
            })
            .map(|t| (*t).clone())
            .collect();
        ensure(got == want, || format!("{pat:?}: {} matches, scan found {}", got.len(), want.len()))?;
    }
    Ok(format!(
        "1000000 triples loaded in {:.1} s; 1000 anchored matches ({results} rows), slowest {:.2} ms; 1000 subsample matches equal the scan",
        load.as_secs_f64(),
        ms(worst)
    ))
}

fn random_aggregate(rng: &mut ChaCha8Rng, kind: AggKind) -> MergeableAggregate {
    let mut a = MergeableAggregate::empty(kind);
    for _ in 0..rng.random_range(0..6) {
        a.push(rng.random_range(0..10_000), rng.random_range(-1e6..1e6));
    }
    a
}

fn close(x: f64, y: f64) -> bool {
    x == y || (x - y).abs() <= 1e-9 * x.abs().max(y.abs())
}

fn merge_monoid() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for i in 0..10_000 {
        let kind = AggKind::ALL[rng.random_range(0..AggKind::ALL.len())];
        let (a, b, c) = (random_aggregate(&mut rng, kind), random_aggregate(&mut rng, kind), random_aggregate(&mut rng, kind));
        let e = MergeableAggregate::empty(kind);
        let m = |x: &MergeableAggregate, y: &MergeableAggregate| x.merge(y).unwrap();
        ensure(m(&a, &b) == m(&b, &a), || format!("pair {i}: not commutative"))?;
        ensure(m(&a, &e) == a && m(&e, &a) == a, || format!("pair {i}: empty is not an identity"))?;
        let (l, r) = (m(&m(&a, &b), &c), m(&a, &m(&b, &c)));
        let same = l.count == r.count
            && l.min == r.min
            && l.max == r.max
            && l.window == r.window
            && close(l.sum, r.sum)
            && match (l.value(), r.value()) {
                (Some(x), Some(y)) => close(x, y),
                (x, y) => x == y,
            };
        ensure(same, || format!("triple {i}: not associative: {l:?} vs {r:?}"))?;
    }
    Ok("10000 random pairs and triples: commutative, associative, empty is the identity".into())
}

fn auth_totality() -> Outcome {
    let shape = [("root", None), ("a", Some("root")), ("b", Some("root"))];
    let topo = Topology::from_parents(&shape, &tokens()).map_err(|e| e.to_string())?;
    let cluster = Cluster::launch(&topo).map_err(|e| e.to_string())?;
    cluster.node("a").ingest_values("w", &[(0, 1.0), (1000, 2.0)]);
    let xml = serialize_osdspec(&OsdSpec::single("urn:acc:svc", vec!["SELECT ?s WHERE { ?s ?p ?o }".into()]));
    let body = |kind: &str| match kind {
        "QUERY" => FederatedQuery::new("w", AggKind::Avg).to_body(),
        "SUBMIT" => xml.clone(),
        "PUSH" => "0,0,avg,1,1,1,1\n".to_string(),
        _ => "capability=w\n".to_string(),
    };
    let before: Vec<u64> = cluster.nodes().map(|n| n.state_digest()).collect();
    let mut rejected = 0;
    // Missing, unknown and empty tokens for every type, plus a consumer
    // token on the admin-only ones.
    let mut cases: Vec<(&str, Option<&str>)> = Vec::new();
    for (kind, _) in REQUEST_TYPES {
        cases.extend([(kind, None), (kind, Some("forged")), (kind, Some(""))]);
        if matches!(kind, "SUBMIT" | "PUSH") {
            cases.push((kind, Some("acc-user")));
        }
    }
    cases.push(("SHUTDOWN", None));
    for target in ["root", "a"] {
        let mut client = Client::connect(cluster.get(target).unwrap().address(), "").map_err(|e| e.to_string())?;
        for (i, &(kind, token)) in cases.iter().enumerate() {
            let mut f = Frame::new(kind)
                .header("query-id", format!("acc-{i}"))
                .header("node-id", if target == "root" { "a" } else { "root" })
                .header("capability", "w")
                .header("capabilities", "w")
                .header("window", "1")
                .header("final", "true")
                .with_body(body(kind));
            if let Some(t) = token {
                f = f.header("token", t);
            }
            let wire = client.send_raw(&f).map_err(|e| e.to_string())?;
            let local = read_frame(&mut &cluster.node(target).handle_remote(&f.encode())[..])
                .map_err(|e| e.to_string())?
                .ok_or("no in-process reply")?;
            for reply in [wire, local] {
                ensure(reply.kind() == "ERROR", || format!("{kind} with {token:?} on {target} answered {}", reply.kind()))?;
                rejected += 1;
            }
        }
    }
    let after: Vec<u64> = cluster.nodes().map(|n| n.state_digest()).collect();
    cluster.shutdown();
    ensure(before == after, || "state changed".into())?;
    Ok(format!("{rejected} unauthenticated requests rejected over the wire and in process; state digests unchanged"))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("discovery golden query", golden_discovery),
        ("service description golden document", golden_service_description),
        ("ingestion conservation", experiment1),
        ("query load", experiment2),
        ("hierarchical exactness", hierarchical_exactness),
        ("bandwidth reduction", bandwidth_reduction),
        ("triple store scale", triple_store_scale),
        ("merge monoid", merge_monoid),
        ("auth totality", auth_totality),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let n = (i + 1).to_string();
        if !filter.is_empty() && !filter.iter().any(|f| *f == n || name.contains(f.as_str())) {
            continue;
        }
        let started = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {n} PASS {name} [{secs:.1} s]: {detail}"),
            Err(why) => {
                failed += 1;
                println!("criterion {n} FAIL {name} [{secs:.1} s]: {why}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
