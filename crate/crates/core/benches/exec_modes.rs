use std::collections::BTreeSet;
use std::hint::black_box;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use hierion::exec::{self, ExecMode};
use hierion::ingestion::StreamTuple;
use hierion::node::NodeId;
use hierion::registry::{Registry, SensorDescription};
use hierion::sdum::{window_aggregate_with, AggKind, AnalyticOpSpec, MergeableAggregate, WindowSpec};
use hierion::sparql::{self, GeoPoint};
use hierion::store::{Iri, Store};
use hierion::vocab::SSN_SENSOR;

const MODES: [ExecMode; 2] = [ExecMode::Sequential, ExecMode::Parallel];

fn tuples(n: usize) -> Vec<StreamTuple> {
    let stream = Iri::new("urn:bench:stream").unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    (0..n).map(|i| StreamTuple::new(stream.clone(), i as u64 * 1000, rng.random_range(0.0..50.0))).collect()
}

fn window_aggregation(c: &mut Criterion) {
    let input = tuples(1_000_000);
    let spec = AnalyticOpSpec::new(
        AggKind::Avg,
        WindowSpec::Tuples(300),
        vec![Iri::new("urn:bench:stream").unwrap()],
        Iri::new("urn:bench:out").unwrap(),
    );
    let mut g = c.benchmark_group("window_aggregation");
    for mode in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(format!("{mode:?}")), &mode, |b, &m| {
            b.iter(|| window_aggregate_with(black_box(&input), &spec, m).unwrap())
        });
    }
    g.finish();
}

fn fold_merge(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let parts: Vec<MergeableAggregate> = (0..200_000)
        .map(|_| MergeableAggregate::of_values(AggKind::Avg, &[rng.random_range(0.0..9.0), rng.random_range(0.0..9.0)]))
        .collect();
    let mut g = c.benchmark_group("fold_merge");
    for mode in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(format!("{mode:?}")), &mode, |b, &m| {
            b.iter(|| {
                exec::fold_reduce(
                    m,
                    black_box(&parts),
                    || MergeableAggregate::empty(AggKind::Avg),
                    |acc, p| acc.merge(p).unwrap(),
                    |a, b| a.merge(&b).unwrap(),
                )
            })
        });
    }
    g.finish();
}

fn filter_eval(c: &mut Criterion) {
    let reg = Registry::new(Arc::new(Store::new()));
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for i in 0..5_000 {
        reg.register_sensor(&SensorDescription {
            id: Iri::new(format!("urn:bench:sensor:{i}")).unwrap(),
            label: format!("s{i}"),
            sensor_type: Iri::new("http://demo.org/ns#TestType").unwrap(),
            type_parents: vec![Iri::new(SSN_SENSOR).unwrap()],
            observed_properties: BTreeSet::from([Iri::new("urn:bench:temperature").unwrap()]),
            location: Some(GeoPoint::new(rng.random_range(5.5..7.5), rng.random_range(46.0..47.0)).unwrap()),
            owner_node: NodeId::new("gw").unwrap(),
        })
        .unwrap();
    }
    let ast = sparql::parse(include_str!("../tests/fixtures/device_discovery.rq")).unwrap();
    let mut g = c.benchmark_group("filter_eval");
    for mode in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(format!("{mode:?}")), &mode, |b, &m| {
            b.iter(|| sparql::evaluate_with(black_box(&ast), reg.store(), m).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, window_aggregation, fold_merge, filter_eval);
criterion_main!(benches);
