use std::collections::BTreeSet;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use super::{ExperimentReport, HarnessError};
use crate::ingestion::{AnnotationPolicy, Clock, EmissionReport, Gateway, VirtualSensorConfig};
use crate::monitoring::{Component, Metrics, Monitor};
use crate::node::NodeId;
use crate::registry::{Registry, SensorDescription};
use crate::sdum::Sdum;
use crate::sparql::GeoPoint;
use crate::store::{Iri, Store};
use crate::vocab::SSN_SENSOR;

#[derive(Clone, Debug)]
pub struct Experiment1Config {
    /// Each entry is one run with that many virtual sensors.
    pub sensor_counts: Vec<usize>,
    pub rate_hz: f64,
    pub duration: Duration,
    pub seed: u64,
    pub annotation: AnnotationPolicy,
    /// Where per-run metric CSVs go; none are written when unset.
    pub metrics_dir: Option<PathBuf>,
}

impl Default for Experiment1Config {
    fn default() -> Self {
        Experiment1Config {
            sensor_counts: (1..=10).collect(),
            rate_hz: 1.0,
            duration: Duration::from_secs(60),
            seed: 7,
            annotation: AnnotationPolicy::default(),
            metrics_dir: None,
        }
    }
}

const ORIGIN_MS: u64 = 1_500_000_000_000;

fn sensor(i: usize, node: &NodeId) -> SensorDescription {
    // A small grid around Lausanne.
    let lon = 6.6 + (i % 10) as f64 * 0.01;
    let lat = 46.5 + (i / 10) as f64 * 0.01;
    SensorDescription {
        id: Iri::new(format!("urn:hierion:sensor:exp1:{i}")).expect("valid IRI"),
        label: format!("virtual station {i}"),
        sensor_type: Iri::new("urn:hierion:vocab#WeatherStation").expect("valid IRI"),
        type_parents: vec![Iri::new(SSN_SENSOR).expect("valid IRI")],
        observed_properties: BTreeSet::new(),
        location: Some(GeoPoint::new(lon, lat).expect("in range")),
        owner_node: node.clone(),
    }
}

struct Run {
    streams: usize,
    emission: EmissionReport,
    sdum_delivered: u64,
    ingest_delivered: u64,
    min_samples: usize,
    metric_csv: Option<PathBuf>,
}

fn run_once(cfg: &Experiment1Config, sensors: usize) -> Result<Run, HarnessError> {
    let node = NodeId::new("gateway-1").expect("valid id");
    let metrics = Metrics::new(node.clone());
    let monitor = Monitor::new(Arc::clone(&metrics));
    let store = Arc::new(Store::new());
    let registry = Arc::new(Registry::new(Arc::clone(&store)));
    let gateway = Gateway::new(node.clone(), store, Some(registry), Some(&metrics));
    gateway.set_annotation(cfg.annotation);
    let sdum = Sdum::new(Some(&metrics));

    let mut handles = Vec::new();
    for i in 0..sensors {
        let mut vs = VirtualSensorConfig::with_defaults(sensor(i, &node), cfg.seed.wrapping_add(1000 * i as u64));
        vs.rate_hz = cfg.rate_hz;
        handles.push(gateway.create_virtual_sensor(vs)?);
    }
    let streams: Vec<Iri> = handles.iter().flat_map(|h| h.stream_ids()).collect();
    let service = Iri::new(format!("urn:hierion:service:exp1:{sensors}")).expect("valid IRI");
    sdum.start(&service, &streams, None).map_err(|e| HarnessError::Failed(e.to_string()))?;
    let subscription = sdum.deliver(&service).map_err(|e| HarnessError::Failed(e.to_string()))?;
    let rx = gateway.subscribe(None, 1024);

    // Advance in one-second steps of simulated time so every component gets
    // a sample per interval. Step k ends after floor(k * rate) ticks.
    let seconds = cfg.duration.as_secs_f64().ceil() as u64;
    let total_ticks = (cfg.duration.as_secs_f64() * cfg.rate_hz + 1e-9).floor() as u64;
    monitor.sample_at(ORIGIN_MS);
    let emission = std::thread::scope(|scope| -> Result<EmissionReport, HarnessError> {
        let gateway = &gateway;
        let monitor = &monitor;
        let producer = scope.spawn(move || -> Result<EmissionReport, HarnessError> {
            let mut total = EmissionReport::default();
            let mut done = 0u64;
            for k in 1..=seconds {
                let target = ((k as f64 * cfg.rate_hz + 1e-9).floor() as u64).min(total_ticks);
                let step = target - done;
                if step > 0 {
                    let d = Duration::from_secs_f64(step as f64 / cfg.rate_hz);
                    total.absorb(gateway.run_all(&handles, d, Clock::Simulated { origin_ms: ORIGIN_MS })?);
                    done = target;
                }
                monitor.sample_at(ORIGIN_MS + k * 1000);
            }
            Ok(total)
        });
        // Hand every tuple to the delivery manager until the producer is
        // done and the queue is drained.
        loop {
            match rx.recv_timeout(Duration::from_millis(5)) {
                Ok(t) => sdum.offer(&t),
                Err(_) if producer.is_finished() => {
                    while let Ok(t) = rx.try_recv() {
                        sdum.offer(&t);
                    }
                    break;
                }
                Err(_) => {}
            }
        }
        producer.join().expect("producer panicked")
    })?;
    sdum.stop(&service).map_err(|e| HarnessError::Failed(e.to_string()))?;
    let delivered_to_subscriber = subscription.drain().len() as u64;
    let utility = sdum.get_utility(&service).map_err(|e| HarnessError::Failed(e.to_string()))?;
    if utility.tuples_delivered != delivered_to_subscriber {
        return Err(HarnessError::Failed(format!(
            "sdum metered {} tuples but the subscriber saw {delivered_to_subscriber}",
            utility.tuples_delivered
        )));
    }
    let min_samples = Component::ALL.iter().map(|&c| monitor.series(c, None).len()).min().unwrap_or(0);
    let metric_csv = match &cfg.metrics_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            let path = dir.join(format!("experiment1-metrics-{sensors}.csv"));
            monitor.export_csv(&path).map_err(|e| HarnessError::Failed(e.to_string()))?;
            Some(path)
        }
        None => None,
    };
    Ok(Run {
        streams: streams.len(),
        sdum_delivered: utility.tuples_delivered,
        ingest_delivered: metrics.value(Component::Ingest, "tuples_delivered"),
        emission,
        min_samples,
        metric_csv,
    })
}

/// Streams from 1..N virtual sensors on the simulated clock and checks
/// that every emitted tuple reaches the delivery manager.
pub fn run_experiment1(cfg: &Experiment1Config) -> Result<ExperimentReport, HarnessError> {
    let mut report = ExperimentReport::new("experiment1");
    let counts: Vec<String> = cfg.sensor_counts.iter().map(usize::to_string).collect();
    report.param("sensor_counts", counts.join(" "));
    report.param("rate_hz", cfg.rate_hz);
    report.param("duration_s", cfg.duration.as_secs_f64());
    report.param("seed", cfg.seed);
    report.param("clock", "simulated");
    report.columns = [
        "sensors",
        "streams",
        "emitted",
        "delivered",
        "sdum_delivered",
        "ingest_counter",
        "lost",
        "annotated",
        "samples_per_component",
    ]
    .map(String::from)
    .to_vec();
    if cfg.duration.is_zero() {
        report.notes.push("zero duration: nothing to run".into());
        return Ok(report);
    }
    for &n in &cfg.sensor_counts {
        let run = run_once(cfg, n)?;
        let e = &run.emission;
        if e.total_lost() > 0 {
            return Err(HarnessError::Loss {
                sensors: n,
                lost: e.lost.clone(),
            });
        }
        if e.delivered != e.total_emitted() || run.sdum_delivered != e.delivered || run.ingest_delivered != e.delivered {
            return Err(HarnessError::Failed(format!(
                "{n} sensors: emitted {}, gateway delivered {}, ingest counter {}, sdum delivered {}",
                e.total_emitted(),
                e.delivered,
                run.ingest_delivered,
                run.sdum_delivered
            )));
        }
        report.rows.push(vec![
            n.to_string(),
            run.streams.to_string(),
            e.total_emitted().to_string(),
            e.delivered.to_string(),
            run.sdum_delivered.to_string(),
            run.ingest_delivered.to_string(),
            e.total_lost().to_string(),
            e.annotated.to_string(),
            run.min_samples.to_string(),
        ]);
        report.metric_csv.extend(run.metric_csv);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_sensor_has_five_streams() {
        let cfg = Experiment1Config {
            sensor_counts: vec![1],
            duration: Duration::from_secs(3),
            ..Default::default()
        };
        let r = run_experiment1(&cfg).unwrap();
        assert_eq!(r.values("streams"), vec!["5"]);
        assert_eq!(r.values("emitted"), vec!["15"]);
        assert_eq!(r.values("samples_per_component"), vec!["4"]);
    }

    #[test]
    fn zero_duration_is_empty() {
        let cfg = Experiment1Config {
            duration: Duration::ZERO,
            ..Default::default()
        };
        let r = run_experiment1(&cfg).unwrap();
        assert!(r.rows.is_empty());
    }

    #[test]
    fn fractional_rate_keeps_the_tick_count() {
        let cfg = Experiment1Config {
            sensor_counts: vec![2],
            rate_hz: 2.5,
            duration: Duration::from_secs(3),
            ..Default::default()
        };
        let r = run_experiment1(&cfg).unwrap();
        // floor(3 * 2.5) = 7 ticks, 10 streams.
        assert_eq!(r.values("emitted"), vec!["70"]);
    }
}
