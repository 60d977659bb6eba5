//! Virtual sensors: per-property generators driven by a simulated or wall
//! clock, fan-out to bounded subscriber queues, and optional annotation of
//! tuples as observation triples.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::BufRead;
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{sync_channel, Receiver, SyncSender};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use crate::monitoring::{Component, Counter, Metrics};
use crate::node::NodeId;
use crate::registry::{Registry, RegistryError, SensorDescription};
use crate::store::{GraphId, Iri, Store, StoreError, Term, Triple};
use crate::vocab::*;

#[derive(Clone, Debug, PartialEq)]
pub struct StreamTuple {
    pub stream_id: Iri,
    /// Milliseconds since the epoch, or since the simulated clock's origin.
    pub timestamp: u64,
    pub value: f64,
}

impl StreamTuple {
    pub fn new(stream_id: Iri, timestamp: u64, value: f64) -> Self {
        StreamTuple {
            stream_id,
            timestamp,
            value,
        }
    }

    /// `stream_id,timestamp,value`.
    pub fn to_record(&self) -> String {
        format!("{},{},{}", self.stream_id, self.timestamp, self.value)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("stream `{0}` already exists")]
    Conflict(String),
    #[error("unknown stream `{0}`")]
    UnknownStream(String),
    #[error("sensor `{0}` is already running")]
    AlreadyRunning(String),
    #[error("replay file line {line}: {message}")]
    Replay { line: usize, message: String },
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// How a stream's values are produced.
#[derive(Clone, Debug, PartialEq)]
pub enum Generator {
    /// Uniform steps in `[-step, step]` from `start`, seeded with `seed`.
    RandomWalk { seed: u64, start: f64, step: f64 },
    Constant(f64),
    /// Rows of `(timestamp_ms, value)`; the stream ends when they run out.
    Replay(Arc<Vec<(u64, f64)>>),
}

/// The five default properties with their walk start and step.
pub const DEFAULT_PROPERTIES: [(&str, f64, f64); 5] = [
    ("temperature", 20.0, 0.2),
    ("humidity", 60.0, 0.5),
    ("carbonMonoxide", 0.5, 0.02),
    ("pressure", 1013.0, 0.3),
    ("noise", 55.0, 1.0),
];

/// `{sensor}/stream/{property local name}`.
pub fn stream_id(sensor: &Iri, property: &Iri) -> Iri {
    Iri::new(format!("{sensor}/stream/{}", property.local_name())).expect("derived from valid IRIs")
}

pub fn property_iri(local: &str) -> Iri {
    Iri::new(format!("{PROPERTY_NS}{local}")).expect("property names are IRI-safe")
}

/// Reads a replay file of `timestamp_ms,value` rows. Blank lines and lines
/// starting with `#` are skipped; an optional `timestamp_ms,value` header is
/// allowed. Timestamps must strictly increase.
pub fn read_replay(input: impl BufRead) -> Result<Vec<(u64, f64)>, IngestError> {
    let mut rows: Vec<(u64, f64)> = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') || (i == 0 && t == "timestamp_ms,value") {
            continue;
        }
        let bad = |message: &str| IngestError::Replay {
            line: i + 1,
            message: message.to_string(),
        };
        let (ts, v) = t.split_once(',').ok_or_else(|| bad("expected `timestamp_ms,value`"))?;
        let ts: u64 = ts.trim().parse().map_err(|_| bad("bad timestamp"))?;
        let v: f64 = v.trim().parse().map_err(|_| bad("bad value"))?;
        if !v.is_finite() {
            return Err(bad("value must be finite"));
        }
        if rows.last().is_some_and(|&(prev, _)| prev >= ts) {
            return Err(bad("timestamps must strictly increase"));
        }
        rows.push((ts, v));
    }
    Ok(rows)
}

pub fn load_replay(path: impl AsRef<Path>) -> Result<Vec<(u64, f64)>, IngestError> {
    let file = std::fs::File::open(path)?;
    read_replay(std::io::BufReader::new(file))
}

#[derive(Clone, Debug, PartialEq)]
pub struct StreamConfig {
    pub property: Iri,
    pub generator: Generator,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VirtualSensorConfig {
    pub sensor: SensorDescription,
    pub streams: Vec<StreamConfig>,
    pub rate_hz: f64,
}

impl VirtualSensorConfig {
    /// The five default streams at 1 Hz. Stream `i` walks with seed
    /// `seed.wrapping_add(i)`.
    pub fn with_defaults(sensor: SensorDescription, seed: u64) -> Self {
        let streams = DEFAULT_PROPERTIES
            .iter()
            .enumerate()
            .map(|(i, &(name, start, step))| StreamConfig {
                property: property_iri(name),
                generator: Generator::RandomWalk {
                    seed: seed.wrapping_add(i as u64),
                    start,
                    step,
                },
            })
            .collect();
        VirtualSensorConfig {
            sensor,
            streams,
            rate_hz: 1.0,
        }
    }

    pub fn validate(&self) -> Result<(), IngestError> {
        if !(self.rate_hz > 0.0 && self.rate_hz <= 1000.0) {
            return Err(IngestError::Invalid(format!(
                "rate_hz must be in (0, 1000], got {}",
                self.rate_hz
            )));
        }
        if self.streams.is_empty() {
            return Err(IngestError::Invalid("at least one stream is required".into()));
        }
        Ok(())
    }

    pub fn stream_id(&self, property: &Iri) -> Iri {
        stream_id(&self.sensor.id, property)
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GatewayFile {
    #[serde(default)]
    sensor: Vec<SensorEntry>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SensorEntry {
    description: String,
    #[serde(default = "one")]
    rate_hz: f64,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    stream: Vec<StreamEntry>,
}

fn one() -> f64 {
    1.0
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct StreamEntry {
    property: String,
    #[serde(default)]
    generator: Option<String>,
    start: Option<f64>,
    step: Option<f64>,
    value: Option<f64>,
    file: Option<String>,
    seed: Option<u64>,
}

/// Parses a gateway file (TOML). Each `[[sensor]]` names a sensor
/// description file and optionally lists `[[sensor.stream]]` entries; with
/// no streams the five defaults are used. Relative paths resolve against
/// `base_dir`.
pub fn load_gateway_config(text: &str, base_dir: &Path) -> Result<Vec<VirtualSensorConfig>, IngestError> {
    let file: GatewayFile = toml::from_str(text).map_err(|e| IngestError::Invalid(e.to_string()))?;
    let mut out = Vec::new();
    for entry in file.sensor {
        let desc_text = std::fs::read_to_string(base_dir.join(&entry.description))?;
        let sensor = SensorDescription::from_toml(&desc_text)?;
        let mut config = VirtualSensorConfig::with_defaults(sensor, entry.seed);
        config.rate_hz = entry.rate_hz;
        if !entry.stream.is_empty() {
            config.streams.clear();
        }
        for (i, s) in entry.stream.into_iter().enumerate() {
            let property = if s.property.contains(':') {
                Iri::new(&s.property)?
            } else {
                property_iri(&s.property)
            };
            let generator = match s.generator.as_deref().unwrap_or("walk") {
                "walk" => Generator::RandomWalk {
                    seed: s.seed.unwrap_or(entry.seed.wrapping_add(i as u64)),
                    start: s.start.unwrap_or(0.0),
                    step: s.step.unwrap_or(1.0),
                },
                "constant" => Generator::Constant(
                    s.value
                        .ok_or_else(|| IngestError::Invalid("constant stream needs `value`".into()))?,
                ),
                "replay" => {
                    let path = s
                        .file
                        .ok_or_else(|| IngestError::Invalid("replay stream needs `file`".into()))?;
                    Generator::Replay(Arc::new(load_replay(base_dir.join(path))?))
                }
                other => return Err(IngestError::Invalid(format!("unknown generator `{other}`"))),
            };
            config.streams.push(StreamConfig { property, generator });
        }
        out.push(config);
    }
    Ok(out)
}

enum Source {
    Walk { rng: Box<ChaCha8Rng>, value: f64, step: f64 },
    Constant(f64),
    Replay { rows: Arc<Vec<(u64, f64)>>, next: usize },
}

impl Source {
    fn new(g: &Generator) -> Self {
        match g {
            Generator::RandomWalk { seed, start, step } => Source::Walk {
                rng: Box::new(ChaCha8Rng::seed_from_u64(*seed)),
                value: *start,
                step: *step,
            },
            Generator::Constant(v) => Source::Constant(*v),
            Generator::Replay(rows) => Source::Replay {
                rows: Arc::clone(rows),
                next: 0,
            },
        }
    }

    /// Next `(timestamp override, value)`; `None` when exhausted.
    fn next(&mut self) -> Option<(Option<u64>, f64)> {
        match self {
            Source::Walk { rng, value, step } => {
                let v = *value;
                if *step > 0.0 {
                    *value += rng.random_range(-*step..=*step);
                }
                Some((None, v))
            }
            Source::Constant(v) => Some((None, *v)),
            Source::Replay { rows, next } => {
                let &(ts, v) = rows.get(*next)?;
                *next += 1;
                Some((Some(ts), v))
            }
        }
    }
}

struct StreamState {
    id: Iri,
    source: Source,
    last_ts: Option<u64>,
}

struct SensorState {
    streams: Vec<StreamState>,
    /// Ticks emitted so far; simulated timestamps continue across runs.
    tick: u64,
}

pub struct VirtualSensor {
    config: VirtualSensorConfig,
    running: AtomicBool,
    stop: AtomicBool,
    state: Mutex<SensorState>,
}

impl VirtualSensor {
    pub fn id(&self) -> &Iri {
        &self.config.sensor.id
    }

    pub fn stream_ids(&self) -> Vec<Iri> {
        self.config
            .streams
            .iter()
            .map(|s| self.config.stream_id(&s.property))
            .collect()
    }

    pub fn config(&self) -> &VirtualSensorConfig {
        &self.config
    }

    /// Asks a wall-clock run to end early.
    pub fn request_stop(&self) {
        self.stop.store(true, Ordering::Relaxed);
    }

    pub fn is_running(&self) -> bool {
        self.running.load(Ordering::Relaxed)
    }
}

pub type SensorHandle = Arc<VirtualSensor>;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Clock {
    /// Deterministic: tick `k` is stamped `origin_ms + floor(k * 1000 / rate)`.
    Simulated { origin_ms: u64 },
    Wall,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AnnotationPolicy {
    Off,
    /// Annotate every n-th tuple of each stream (n >= 1).
    Every(u64),
}

impl Default for AnnotationPolicy {
    fn default() -> Self {
        AnnotationPolicy::Every(100)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct EmissionReport {
    pub emitted: BTreeMap<Iri, u64>,
    /// Successful hand-offs, summed over subscribers.
    pub delivered: u64,
    /// Tuples a subscriber could not take because it had disconnected.
    pub lost: BTreeMap<Iri, u64>,
    pub annotated: u64,
}

impl EmissionReport {
    pub fn total_emitted(&self) -> u64 {
        self.emitted.values().sum()
    }

    pub fn total_lost(&self) -> u64 {
        self.lost.values().sum()
    }

    pub fn absorb(&mut self, other: EmissionReport) {
        for (k, v) in other.emitted {
            *self.emitted.entry(k).or_default() += v;
        }
        for (k, v) in other.lost {
            *self.lost.entry(k).or_default() += v;
        }
        self.delivered += other.delivered;
        self.annotated += other.annotated;
    }
}

struct Subscriber {
    streams: Option<BTreeSet<Iri>>,
    tx: SyncSender<StreamTuple>,
}

struct Counters {
    emitted: Counter,
    delivered: Counter,
    lost: Counter,
    annotated: Counter,
    streams: Counter,
}

/// Hosts virtual sensors for one node.
pub struct Gateway {
    node: NodeId,
    store: Arc<Store>,
    registry: Option<Arc<Registry>>,
    observations: GraphId,
    sensors: Mutex<BTreeMap<Iri, SensorHandle>>,
    /// stream id -> (sensor, property)
    streams: Mutex<HashMap<Iri, (Iri, Iri)>>,
    subscribers: Mutex<Vec<Subscriber>>,
    annotation: Mutex<AnnotationPolicy>,
    counters: Counters,
}

impl Gateway {
    pub fn new(node: NodeId, store: Arc<Store>, registry: Option<Arc<Registry>>, metrics: Option<&Metrics>) -> Self {
        let counter = |name: &str| metrics.map_or_else(Counter::default, |m| m.counter(Component::Ingest, name));
        let observations = GraphId::parse(&format!("{OBSERVATION_GRAPH_PREFIX}{node}")).expect("node ids are IRI-safe");
        Gateway {
            node,
            store,
            registry,
            observations,
            sensors: Mutex::new(BTreeMap::new()),
            streams: Mutex::new(HashMap::new()),
            subscribers: Mutex::new(Vec::new()),
            annotation: Mutex::new(AnnotationPolicy::default()),
            counters: Counters {
                emitted: counter("tuples_emitted"),
                delivered: counter("tuples_delivered"),
                lost: counter("tuples_lost"),
                annotated: counter("annotations"),
                streams: counter("streams"),
            },
        }
    }

    pub fn node(&self) -> &NodeId {
        &self.node
    }

    pub fn observation_graph(&self) -> &GraphId {
        &self.observations
    }

    pub fn set_annotation(&self, policy: AnnotationPolicy) {
        *self.annotation.lock().expect("gateway poisoned") = policy;
    }

    /// Registers the sensor if a registry is attached and it is not known
    /// yet, then creates one stream per configured property.
    pub fn create_virtual_sensor(&self, mut config: VirtualSensorConfig) -> Result<SensorHandle, IngestError> {
        config.validate()?;
        for s in &config.streams {
            config.sensor.observed_properties.insert(s.property.clone());
        }
        let ids: Vec<Iri> = config.streams.iter().map(|s| config.stream_id(&s.property)).collect();
        let mut streams = self.streams.lock().expect("gateway poisoned");
        let mut seen = BTreeSet::new();
        for id in &ids {
            if streams.contains_key(id) || !seen.insert(id) {
                return Err(IngestError::Conflict(id.to_string()));
            }
        }
        if let Some(reg) = &self.registry {
            match reg.describe_sensor(&config.sensor.id) {
                Ok(_) => {}
                Err(RegistryError::NotFound(_)) => {
                    reg.register_sensor(&config.sensor)?;
                }
                Err(e) => return Err(e.into()),
            }
        }
        for (id, s) in ids.iter().zip(&config.streams) {
            streams.insert(id.clone(), (config.sensor.id.clone(), s.property.clone()));
        }
        self.counters.streams.add(ids.len() as u64);
        let state = SensorState {
            streams: ids
                .into_iter()
                .zip(&config.streams)
                .map(|(id, s)| StreamState {
                    id,
                    source: Source::new(&s.generator),
                    last_ts: None,
                })
                .collect(),
            tick: 0,
        };
        let handle = Arc::new(VirtualSensor {
            config,
            running: AtomicBool::new(false),
            stop: AtomicBool::new(false),
            state: Mutex::new(state),
        });
        self.sensors
            .lock()
            .expect("gateway poisoned")
            .insert(handle.id().clone(), Arc::clone(&handle));
        Ok(handle)
    }

    pub fn sensors(&self) -> Vec<SensorHandle> {
        self.sensors.lock().expect("gateway poisoned").values().cloned().collect()
    }

    pub fn stream_count(&self) -> usize {
        self.streams.lock().expect("gateway poisoned").len()
    }

    /// A bounded queue receiving every tuple of `streams` (all streams when
    /// `None`). Producers block while it is full. Subscriptions take effect
    /// at the start of the next run.
    pub fn subscribe(&self, streams: Option<&[Iri]>, capacity: usize) -> Receiver<StreamTuple> {
        let (tx, rx) = sync_channel(capacity.max(1));
        self.subscribers.lock().expect("gateway poisoned").push(Subscriber {
            streams: streams.map(|s| s.iter().cloned().collect()),
            tx,
        });
        rx
    }

    /// Stores three triples describing `tuple` in the observation graph.
    pub fn annotate(&self, tuple: &StreamTuple) -> Result<usize, IngestError> {
        let (sensor, property) = self
            .streams
            .lock()
            .expect("gateway poisoned")
            .get(&tuple.stream_id)
            .cloned()
            .ok_or_else(|| IngestError::UnknownStream(tuple.stream_id.to_string()))?;
        let obs = Term::Iri(Iri::new(format!("{}/obs/{}", tuple.stream_id, tuple.timestamp))?);
        let triples = [
            Triple::new(obs.clone(), Iri::new(SSN_OBSERVED_BY)?, Term::Iri(sensor))?,
            Triple::new(obs.clone(), Iri::new(SSN_OBSERVED_PROPERTY)?, Term::Iri(property))?,
            Triple::new(
                obs,
                Iri::new(SSN_OBSERVATION_RESULT)?,
                Term::typed_literal(format!("{} {}", tuple.timestamp, tuple.value), Iri::new(HIERION_TIMED_VALUE)?),
            )?,
        ];
        let n = self.store.insert(&self.observations, &triples)?;
        self.counters.annotated.add(n as u64);
        Ok(n)
    }

    fn live_subscribers(&self) -> Vec<(Option<BTreeSet<Iri>>, SyncSender<StreamTuple>)> {
        self.subscribers
            .lock()
            .expect("gateway poisoned")
            .iter()
            .map(|s| (s.streams.clone(), s.tx.clone()))
            .collect()
    }

    /// Runs one sensor for `duration`, blocking the caller. Emits
    /// `floor(duration * rate_hz)` ticks; each tick yields one tuple per
    /// stream (replay streams stop when their rows run out).
    pub fn run(&self, handle: &SensorHandle, duration: Duration, clock: Clock) -> Result<EmissionReport, IngestError> {
        if handle.running.swap(true, Ordering::AcqRel) {
            return Err(IngestError::AlreadyRunning(handle.id().to_string()));
        }
        handle.stop.store(false, Ordering::Relaxed);
        let result = self.emit(handle, duration, clock);
        handle.running.store(false, Ordering::Release);
        result
    }

    /// Runs every given sensor concurrently, one thread each.
    pub fn run_all(&self, handles: &[SensorHandle], duration: Duration, clock: Clock) -> Result<EmissionReport, IngestError> {
        let results: Vec<Result<EmissionReport, IngestError>> = std::thread::scope(|scope| {
            let jobs: Vec<_> = handles
                .iter()
                .map(|h| scope.spawn(move || self.run(h, duration, clock)))
                .collect();
            jobs.into_iter()
                .map(|j| j.join().expect("sensor thread panicked"))
                .collect()
        });
        let mut total = EmissionReport::default();
        for r in results {
            total.absorb(r?);
        }
        Ok(total)
    }

    fn emit(&self, handle: &VirtualSensor, duration: Duration, clock: Clock) -> Result<EmissionReport, IngestError> {
        let rate = handle.config.rate_hz;
        // The epsilon absorbs representation error in products like 60 * 0.1.
        let ticks = (duration.as_secs_f64() * rate + 1e-9).floor() as u64;
        let subscribers = self.live_subscribers();
        let policy = *self.annotation.lock().expect("gateway poisoned");
        let mut report = EmissionReport::default();
        let mut state = handle.state.lock().expect("sensor poisoned");
        for s in &state.streams {
            report.emitted.insert(s.id.clone(), 0);
        }
        let started = Instant::now();
        let period = Duration::from_secs_f64(1.0 / rate);
        for k in 0..ticks {
            let tick = state.tick;
            let ts_default = match clock {
                Clock::Simulated { origin_ms } => origin_ms + (tick as f64 * 1000.0 / rate).floor() as u64,
                Clock::Wall => {
                    if handle.stop.load(Ordering::Relaxed) {
                        break;
                    }
                    let due = started + period.mul_f64((k + 1) as f64);
                    if let Some(wait) = due.checked_duration_since(Instant::now()) {
                        std::thread::sleep(wait);
                    }
                    crate::monitoring::now_ms()
                }
            };
            state.tick += 1;
            for stream in state.streams.iter_mut() {
                let Some((ts_override, value)) = stream.source.next() else {
                    continue;
                };
                let mut ts = ts_override.unwrap_or(ts_default);
                if let Some(prev) = stream.last_ts {
                    // Wall-clock readings can repeat within a millisecond.
                    ts = ts.max(prev + 1);
                }
                stream.last_ts = Some(ts);
                let tuple = StreamTuple::new(stream.id.clone(), ts, value);
                *report.emitted.get_mut(&stream.id).expect("seeded above") += 1;
                self.counters.emitted.incr();
                for (filter, tx) in &subscribers {
                    if filter.as_ref().is_some_and(|f| !f.contains(&stream.id)) {
                        continue;
                    }
                    if tx.send(tuple.clone()).is_ok() {
                        report.delivered += 1;
                        self.counters.delivered.incr();
                    } else {
                        *report.lost.entry(stream.id.clone()).or_default() += 1;
                        self.counters.lost.incr();
                    }
                }
                if let AnnotationPolicy::Every(n) = policy {
                    if tick.is_multiple_of(n.max(1)) {
                        report.annotated += self.annotate(&tuple)? as u64;
                    }
                }
            }
        }
        Ok(report)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparql::GeoPoint;

    fn desc(id: &str) -> SensorDescription {
        SensorDescription {
            id: Iri::new(id).unwrap(),
            label: "station".into(),
            sensor_type: Iri::new("urn:t:Weather").unwrap(),
            type_parents: vec![Iri::new(SSN_SENSOR).unwrap()],
            observed_properties: BTreeSet::new(),
            location: Some(GeoPoint::new(0.0, 0.0).unwrap()),
            owner_node: NodeId::new("n").unwrap(),
        }
    }

    fn gateway() -> Gateway {
        let store = Arc::new(Store::new());
        let reg = Arc::new(Registry::new(Arc::clone(&store)));
        let g = Gateway::new(NodeId::new("n").unwrap(), store, Some(reg), None);
        g.set_annotation(AnnotationPolicy::Off);
        g
    }

    const SIM: Clock = Clock::Simulated { origin_ms: 0 };

    #[test]
    fn defaults_give_five_streams() {
        let g = gateway();
        let h = g.create_virtual_sensor(VirtualSensorConfig::with_defaults(desc("urn:s:0"), 1)).unwrap();
        assert_eq!(h.stream_ids().len(), 5);
        assert_eq!(
            h.stream_ids()[0].as_str(),
            "urn:s:0/stream/temperature"
        );
        for i in 1..10 {
            g.create_virtual_sensor(VirtualSensorConfig::with_defaults(desc(&format!("urn:s:{i}")), i)).unwrap();
        }
        assert_eq!(g.stream_count(), 50);
    }

    #[test]
    fn auto_registers_with_properties() {
        let g = gateway();
        g.create_virtual_sensor(VirtualSensorConfig::with_defaults(desc("urn:s:0"), 1)).unwrap();
        let d = g.registry.as_ref().unwrap().describe_sensor(&Iri::new("urn:s:0").unwrap()).unwrap();
        assert_eq!(d.observed_properties.len(), 5);
    }

    #[test]
    fn invalid_and_duplicate() {
        let g = gateway();
        let mut c = VirtualSensorConfig::with_defaults(desc("urn:s:0"), 1);
        c.rate_hz = 0.0;
        assert!(matches!(g.create_virtual_sensor(c), Err(IngestError::Invalid(_))));
        let c = VirtualSensorConfig::with_defaults(desc("urn:s:0"), 1);
        g.create_virtual_sensor(c.clone()).unwrap();
        assert!(matches!(g.create_virtual_sensor(c), Err(IngestError::Conflict(_))));
    }

    #[test]
    fn simulated_counts_and_order() {
        let g = gateway();
        let mut c = VirtualSensorConfig::with_defaults(desc("urn:s:0"), 1);
        c.streams.truncate(1);
        let h = g.create_virtual_sensor(c).unwrap();
        let rx = g.subscribe(None, 1000);
        let r = g.run(&h, Duration::from_secs(60), SIM).unwrap();
        assert_eq!(r.total_emitted(), 60);
        let got: Vec<StreamTuple> = rx.try_iter().collect();
        assert_eq!(got.len(), 60);
        assert!(got.windows(2).all(|w| w[0].timestamp < w[1].timestamp));
        assert_eq!(got[59].timestamp, 59_000);
        // A second run continues the clock.
        g.run(&h, Duration::from_secs(2), SIM).unwrap();
        let more: Vec<StreamTuple> = rx.try_iter().collect();
        assert_eq!(more.iter().map(|t| t.timestamp).collect::<Vec<_>>(), vec![60_000, 61_000]);
        assert_eq!(g.run(&h, Duration::ZERO, SIM).unwrap().total_emitted(), 0);
    }

    #[test]
    fn ten_sensors_three_thousand() {
        let g = gateway();
        let handles: Vec<_> = (0..10)
            .map(|i| g.create_virtual_sensor(VirtualSensorConfig::with_defaults(desc(&format!("urn:s:{i}")), i)).unwrap())
            .collect();
        // A small queue forces producers to block on a slow consumer.
        let rx = g.subscribe(None, 8);
        let consumer = std::thread::spawn(move || rx.iter().count());
        let r = g.run_all(&handles, Duration::from_secs(60), SIM).unwrap();
        drop(g);
        assert_eq!(r.total_emitted(), 3000);
        assert_eq!(r.delivered, 3000);
        assert_eq!(r.total_lost(), 0);
        assert_eq!(consumer.join().unwrap(), 3000);
    }

    #[test]
    fn double_start_is_rejected() {
        let g = gateway();
        let h = g.create_virtual_sensor(VirtualSensorConfig::with_defaults(desc("urn:s:0"), 1)).unwrap();
        h.running.store(true, Ordering::Relaxed);
        assert!(matches!(g.run(&h, Duration::from_secs(1), SIM), Err(IngestError::AlreadyRunning(_))));
    }

    #[test]
    fn disconnected_subscriber_is_counted() {
        let g = gateway();
        let h = g.create_virtual_sensor(VirtualSensorConfig::with_defaults(desc("urn:s:0"), 1)).unwrap();
        drop(g.subscribe(None, 4));
        let r = g.run(&h, Duration::from_secs(3), SIM).unwrap();
        assert_eq!(r.total_lost(), 15);
        assert_eq!(r.delivered, 0);
    }

    #[test]
    fn annotation_adds_three_triples() {
        let g = gateway();
        let h = g.create_virtual_sensor(VirtualSensorConfig::with_defaults(desc("urn:s:0"), 1)).unwrap();
        let sid = h.stream_ids()[0].clone();
        assert_eq!(g.annotate(&StreamTuple::new(sid.clone(), 1, 2.0)).unwrap(), 3);
        for t in 2..12 {
            g.annotate(&StreamTuple::new(sid.clone(), t, 2.0)).unwrap();
        }
        assert_eq!(g.store.count(g.observation_graph()), 33);
        assert!(matches!(
            g.annotate(&StreamTuple::new(Iri::new("urn:nope").unwrap(), 1, 1.0)),
            Err(IngestError::UnknownStream(_))
        ));
        g.set_annotation(AnnotationPolicy::Every(10));
        let r = g.run(&h, Duration::from_secs(20), Clock::Simulated { origin_ms: 1_000_000 }).unwrap();
        // Ticks 0 and 10, five streams, three triples each.
        assert_eq!(r.annotated, 2 * 5 * 3);
    }

    #[test]
    fn replay_rows() {
        let rows = read_replay("timestamp_ms,value\n10,1.5\n20,2\n\n# c\n30,3\n".as_bytes()).unwrap();
        assert_eq!(rows, vec![(10, 1.5), (20, 2.0), (30, 3.0)]);
        assert!(read_replay("10,1\n10,2\n".as_bytes()).is_err());
        assert!(read_replay("x,1\n".as_bytes()).is_err());
        let g = gateway();
        let mut c = VirtualSensorConfig::with_defaults(desc("urn:s:r"), 0);
        c.streams = vec![StreamConfig {
            property: property_iri("waitingTime"),
            generator: Generator::Replay(Arc::new(rows)),
        }];
        let h = g.create_virtual_sensor(c).unwrap();
        let rx = g.subscribe(None, 16);
        let r = g.run(&h, Duration::from_secs(10), SIM).unwrap();
        assert_eq!(r.total_emitted(), 3);
        let ts: Vec<u64> = rx.try_iter().map(|t| t.timestamp).collect();
        assert_eq!(ts, vec![10, 20, 30]);
    }

    #[test]
    fn walks_are_seeded() {
        let run = || {
            let g = gateway();
            let h = g.create_virtual_sensor(VirtualSensorConfig::with_defaults(desc("urn:s:0"), 42)).unwrap();
            let rx = g.subscribe(None, 100);
            g.run(&h, Duration::from_secs(10), SIM).unwrap();
            rx.try_iter().map(|t| t.value).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn wall_clock_within_one() {
        let g = gateway();
        let mut c = VirtualSensorConfig::with_defaults(desc("urn:s:0"), 1);
        c.rate_hz = 100.0;
        c.streams.truncate(1);
        let h = g.create_virtual_sensor(c).unwrap();
        let r = g.run(&h, Duration::from_millis(200), Clock::Wall).unwrap();
        assert!((19..=21).contains(&r.total_emitted()), "{}", r.total_emitted());
    }

    #[test]
    fn gateway_file() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            dir.path().join("s.toml"),
            "id = \"urn:s:f\"\nlabel = \"x\"\nsensor_type = \"urn:t:W\"\ntype_parents = [\"http://purl.oclc.org/NET/ssnx/ssn#Sensor\"]\nobserved_properties = [\"urn:p:x\"]\nowner_node = \"n\"\n[location]\nlon = 1.0\nlat = 2.0\n",
        )
        .unwrap();
        std::fs::write(dir.path().join("r.csv"), "1,5\n2,6\n").unwrap();
        let text = "[[sensor]]\ndescription = \"s.toml\"\nrate_hz = 2.0\nseed = 9\n\n[[sensor]]\ndescription = \"s.toml\"\n[[sensor.stream]]\nproperty = \"waitingTime\"\ngenerator = \"replay\"\nfile = \"r.csv\"\n";
        let configs = load_gateway_config(text, dir.path()).unwrap();
        assert_eq!(configs.len(), 2);
        assert_eq!(configs[0].streams.len(), 5);
        assert_eq!(configs[0].rate_hz, 2.0);
        assert_eq!(configs[1].streams.len(), 1);
        assert!(load_gateway_config("[[sensor]]\nbogus = 1\n", dir.path()).is_err());
    }
}
