//! Service delivery: windowed aggregation of streams, mergeable aggregates,
//! per-service delivery to subscribers, and usage metering.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::{Arc, Mutex};

use crate::exec::{self, ExecMode};
use crate::ingestion::StreamTuple;
use crate::monitoring::{Component, Counter, Metrics};
use crate::store::Iri;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AggKind {
    Avg,
    Sum,
    Count,
    Min,
    Max,
}

impl AggKind {
    pub const ALL: [AggKind; 5] = [AggKind::Avg, AggKind::Sum, AggKind::Count, AggKind::Min, AggKind::Max];

    pub fn as_str(self) -> &'static str {
        match self {
            AggKind::Avg => "avg",
            AggKind::Sum => "sum",
            AggKind::Count => "count",
            AggKind::Min => "min",
            AggKind::Max => "max",
        }
    }
}

impl fmt::Display for AggKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AggKind {
    type Err = SdumError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        AggKind::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| SdumError::Invalid(format!("unknown aggregate kind `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SdumError {
    #[error("cannot merge a {0} aggregate with a {1} aggregate")]
    KindMismatch(AggKind, AggKind),
    #[error("{0}")]
    Invalid(String),
    #[error("service `{0}` is not active")]
    NotActive(String),
    #[error("service `{0}` is already active")]
    AlreadyActive(String),
    #[error("bad aggregate record: {0}")]
    Record(String),
}

/// (sum, count, min, max) summary of a multiset of values. Every kind keeps
/// all four fields, so merged averages stay exact regardless of how the
/// data was partitioned.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MergeableAggregate {
    pub kind: AggKind,
    pub sum: f64,
    pub count: u64,
    pub min: f64,
    pub max: f64,
    /// First and last timestamp covered; `None` when empty.
    pub window: Option<(u64, u64)>,
}

impl MergeableAggregate {
    pub fn empty(kind: AggKind) -> Self {
        MergeableAggregate {
            kind,
            sum: 0.0,
            count: 0,
            min: f64::INFINITY,
            max: f64::NEG_INFINITY,
            window: None,
        }
    }

    pub fn of(kind: AggKind, tuples: &[StreamTuple]) -> Self {
        let mut agg = Self::empty(kind);
        for t in tuples {
            agg.push(t.timestamp, t.value);
        }
        agg
    }

    pub fn of_values(kind: AggKind, values: &[f64]) -> Self {
        let mut agg = Self::empty(kind);
        for &v in values {
            agg.push_value(v);
        }
        agg
    }

    fn push_value(&mut self, value: f64) {
        self.sum += value;
        self.count += 1;
        self.min = self.min.min(value);
        self.max = self.max.max(value);
    }

    pub fn push(&mut self, timestamp: u64, value: f64) {
        self.push_value(value);
        self.window = Some(match self.window {
            Some((a, b)) => (a.min(timestamp), b.max(timestamp)),
            None => (timestamp, timestamp),
        });
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    /// The value this aggregate's kind reports; `None` when empty.
    pub fn value(&self) -> Option<f64> {
        if self.count == 0 {
            return None;
        }
        Some(match self.kind {
            AggKind::Avg => self.sum / self.count as f64,
            AggKind::Sum => self.sum,
            AggKind::Count => self.count as f64,
            AggKind::Min => self.min,
            AggKind::Max => self.max,
        })
    }

    /// Combines two summaries. Windows are unioned; callers are expected to
    /// merge disjoint data but overlap is not rejected. The empty aggregate
    /// is an exact identity because its extrema are the infinities.
    pub fn merge(&self, other: &Self) -> Result<Self, SdumError> {
        if self.kind != other.kind {
            return Err(SdumError::KindMismatch(self.kind, other.kind));
        }
        Ok(MergeableAggregate {
            kind: self.kind,
            sum: self.sum + other.sum,
            count: self.count + other.count,
            min: self.min.min(other.min),
            max: self.max.max(other.max),
            window: match (self.window, other.window) {
                (Some((a, b)), Some((c, d))) => Some((a.min(c), b.max(d))),
                (w, None) | (None, w) => w,
            },
        })
    }

    /// `window_start,window_end,kind,sum,count,min,max`; empty fields for
    /// the window and extrema of an empty aggregate.
    pub fn to_record(&self) -> String {
        let (ws, we) = match self.window {
            Some((a, b)) => (a.to_string(), b.to_string()),
            None => (String::new(), String::new()),
        };
        if self.count == 0 {
            format!("{ws},{we},{},{},0,,", self.kind, self.sum)
        } else {
            format!("{ws},{we},{},{},{},{},{}", self.kind, self.sum, self.count, self.min, self.max)
        }
    }

    pub fn from_record(line: &str) -> Result<Self, SdumError> {
        let bad = |m: &str| SdumError::Record(format!("{m} in `{line}`"));
        let f: Vec<&str> = line.trim_end_matches(['\r', '\n']).split(',').collect();
        if f.len() != 7 {
            return Err(bad("expected 7 fields"));
        }
        let float = |s: &str| s.parse::<f64>().map_err(|_| bad("bad number"));
        let int = |s: &str| s.parse::<u64>().map_err(|_| bad("bad integer"));
        let kind: AggKind = f[2].parse()?;
        let count = int(f[4])?;
        let window = match (f[0], f[1]) {
            ("", "") => None,
            (a, b) => Some((int(a)?, int(b)?)),
        };
        if count == 0 {
            if !f[5].is_empty() || !f[6].is_empty() {
                return Err(bad("extrema on an empty aggregate"));
            }
            let mut agg = Self::empty(kind);
            agg.sum = float(f[3])?;
            agg.window = window;
            return Ok(agg);
        }
        Ok(MergeableAggregate {
            kind,
            sum: float(f[3])?,
            count,
            min: float(f[5])?,
            max: float(f[6])?,
            window,
        })
    }
}

/// Folds many aggregates with [`MergeableAggregate::merge`].
pub fn merge_all<'a>(
    kind: AggKind,
    parts: impl IntoIterator<Item = &'a MergeableAggregate>,
) -> Result<MergeableAggregate, SdumError> {
    parts
        .into_iter()
        .try_fold(MergeableAggregate::empty(kind), |acc, p| acc.merge(p))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WindowSpec {
    Tuples(usize),
    /// Window length in timestamp units (milliseconds).
    Time(u64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct AnalyticOpSpec {
    pub kind: AggKind,
    pub window: WindowSpec,
    pub inputs: Vec<Iri>,
    pub output: Iri,
    /// Emit empty aggregates for time windows that saw no tuples.
    pub emit_empty: bool,
}

impl AnalyticOpSpec {
    pub fn new(kind: AggKind, window: WindowSpec, inputs: Vec<Iri>, output: Iri) -> Self {
        AnalyticOpSpec {
            kind,
            window,
            inputs,
            output,
            emit_empty: false,
        }
    }

    pub fn validate(&self) -> Result<(), SdumError> {
        match self.window {
            WindowSpec::Tuples(0) => Err(SdumError::Invalid("tuple window must hold at least 1 tuple".into())),
            WindowSpec::Time(0) => Err(SdumError::Invalid("time window must be longer than 0".into())),
            _ => Ok(()),
        }
    }
}

/// Incremental tumbling-window aggregator.
#[derive(Clone, Debug)]
pub struct TumblingWindow {
    kind: AggKind,
    window: WindowSpec,
    emit_empty: bool,
    current: MergeableAggregate,
    /// Index of the open time bucket.
    bucket: Option<u64>,
}

impl TumblingWindow {
    pub fn new(spec: &AnalyticOpSpec) -> Result<Self, SdumError> {
        spec.validate()?;
        Ok(TumblingWindow {
            kind: spec.kind,
            window: spec.window,
            emit_empty: spec.emit_empty,
            current: MergeableAggregate::empty(spec.kind),
            bucket: None,
        })
    }

    fn time_bounds(len: u64, bucket: u64) -> (u64, u64) {
        let start = bucket * len;
        (start, start + len - 1)
    }

    /// Feeds one tuple; returns the aggregates of any windows it closed.
    pub fn push(&mut self, tuple: &StreamTuple) -> Vec<MergeableAggregate> {
        let mut out = Vec::new();
        match self.window {
            WindowSpec::Tuples(n) => {
                self.current.push(tuple.timestamp, tuple.value);
                if self.current.count as usize == n {
                    out.push(std::mem::replace(&mut self.current, MergeableAggregate::empty(self.kind)));
                }
            }
            WindowSpec::Time(len) => {
                let b = tuple.timestamp / len;
                match self.bucket {
                    Some(open) if b > open => {
                        let mut closed = std::mem::replace(&mut self.current, MergeableAggregate::empty(self.kind));
                        closed.window = Some(Self::time_bounds(len, open));
                        out.push(closed);
                        if self.emit_empty {
                            for gap in open + 1..b {
                                let mut e = MergeableAggregate::empty(self.kind);
                                e.window = Some(Self::time_bounds(len, gap));
                                out.push(e);
                            }
                        }
                        self.bucket = Some(b);
                    }
                    // Late tuples fold into the open window.
                    Some(_) => {}
                    None => self.bucket = Some(b),
                }
                self.current.push(tuple.timestamp, tuple.value);
            }
        }
        out
    }

    /// Closes the stream, emitting the final partial window if it holds data.
    pub fn finish(&mut self) -> Option<MergeableAggregate> {
        let mut last = std::mem::replace(&mut self.current, MergeableAggregate::empty(self.kind));
        if last.is_empty() {
            return None;
        }
        if let (WindowSpec::Time(len), Some(b)) = (self.window, self.bucket.take()) {
            last.window = Some(Self::time_bounds(len, b));
        }
        Some(last)
    }
}

/// Aggregates a finished batch of tuples into tumbling windows. Tuple
/// windows are computed chunk-wise under `mode`; time windows stream.
pub fn window_aggregate_with(
    input: &[StreamTuple],
    spec: &AnalyticOpSpec,
    mode: ExecMode,
) -> Result<Vec<MergeableAggregate>, SdumError> {
    spec.validate()?;
    match spec.window {
        WindowSpec::Tuples(n) => Ok(exec::map_chunks(mode, input, n, |chunk| {
            MergeableAggregate::of(spec.kind, chunk)
        })),
        WindowSpec::Time(_) => {
            let mut w = TumblingWindow::new(spec)?;
            let mut out: Vec<MergeableAggregate> = input.iter().flat_map(|t| w.push(t)).collect();
            out.extend(w.finish());
            Ok(out)
        }
    }
}

pub fn window_aggregate(input: &[StreamTuple], spec: &AnalyticOpSpec) -> Result<Vec<MergeableAggregate>, SdumError> {
    window_aggregate_with(input, spec, ExecMode::preferred())
}

/// Item delivered to a service subscriber.
#[derive(Clone, Debug, PartialEq)]
pub enum Delivery {
    Tuple(StreamTuple),
    Aggregate(MergeableAggregate),
    EndOfStream,
}

impl Delivery {
    /// Size of the item as it would travel on the wire.
    fn wire_len(&self) -> u64 {
        match self {
            Delivery::Tuple(t) => t.to_record().len() as u64,
            Delivery::Aggregate(a) => a.to_record().len() as u64,
            Delivery::EndOfStream => 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct UtilityRecord {
    pub service_id: String,
    pub tuples_delivered: u64,
    pub bytes_delivered: u64,
    pub first_delivery: Option<u64>,
    pub last_delivery: Option<u64>,
}

const NO_TIME: u64 = u64::MAX;

struct Meter {
    tuples: AtomicU64,
    bytes: AtomicU64,
    first: AtomicU64,
    last: AtomicU64,
}

impl Meter {
    fn new() -> Self {
        Meter {
            tuples: AtomicU64::new(0),
            bytes: AtomicU64::new(0),
            first: AtomicU64::new(NO_TIME),
            last: AtomicU64::new(NO_TIME),
        }
    }

    fn record(&self, ts: u64, bytes: u64) {
        self.tuples.fetch_add(1, Ordering::Relaxed);
        self.bytes.fetch_add(bytes, Ordering::Relaxed);
        let _ = self.first.compare_exchange(NO_TIME, ts, Ordering::Relaxed, Ordering::Relaxed);
        self.last.store(ts, Ordering::Relaxed);
    }

    fn snapshot(&self, id: &str) -> UtilityRecord {
        let opt = |v: u64| (v != NO_TIME).then_some(v);
        UtilityRecord {
            service_id: id.to_string(),
            tuples_delivered: self.tuples.load(Ordering::Relaxed),
            bytes_delivered: self.bytes.load(Ordering::Relaxed),
            first_delivery: opt(self.first.load(Ordering::Relaxed)),
            last_delivery: opt(self.last.load(Ordering::Relaxed)),
        }
    }
}

struct PipelineState {
    window: Option<TumblingWindow>,
    subscribers: Vec<Sender<Delivery>>,
    stopped: bool,
}

struct Pipeline {
    id: Iri,
    inputs: BTreeSet<Iri>,
    meter: Meter,
    state: Mutex<PipelineState>,
}

impl Pipeline {
    fn send(&self, state: &mut PipelineState, item: Delivery, ts: u64, delivered: &Counter) {
        let bytes = item.wire_len();
        // Subscribers that hung up are dropped; only live deliveries count.
        state.subscribers.retain(|tx| {
            if tx.send(item.clone()).is_ok() {
                self.meter.record(ts, bytes);
                delivered.incr();
                true
            } else {
                false
            }
        });
    }
}

/// Receiving end of a service subscription.
pub struct Subscription {
    rx: Receiver<Delivery>,
}

impl Subscription {
    /// Blocks for the next item. Returns `None` once the stream has ended.
    pub fn recv(&self) -> Option<Delivery> {
        match self.rx.recv() {
            Ok(Delivery::EndOfStream) | Err(_) => None,
            Ok(d) => Some(d),
        }
    }

    /// Everything currently queued, without blocking, up to and excluding end-of-stream.
    pub fn drain(&self) -> Vec<Delivery> {
        self.rx
            .try_iter()
            .take_while(|d| *d != Delivery::EndOfStream)
            .collect()
    }

    pub fn try_recv_raw(&self) -> Option<Delivery> {
        self.rx.try_recv().ok()
    }
}

/// Per-node delivery manager.
pub struct Sdum {
    pipelines: Mutex<HashMap<Iri, Arc<Pipeline>>>,
    delivered: Counter,
    offered: Counter,
}

impl Sdum {
    pub fn new(metrics: Option<&Metrics>) -> Self {
        let (delivered, offered) = match metrics {
            Some(m) => (
                m.counter(Component::Sdum, "tuples_delivered"),
                m.counter(Component::Sdum, "tuples_offered"),
            ),
            None => (Counter::default(), Counter::default()),
        };
        Sdum {
            pipelines: Mutex::new(HashMap::new()),
            delivered,
            offered,
        }
    }

    /// Starts delivery for a service fed by `inputs`. With an op spec the
    /// composed stream is windowed; without one, tuples pass through.
    pub fn start(&self, service_id: &Iri, inputs: &[Iri], op: Option<&AnalyticOpSpec>) -> Result<(), SdumError> {
        let window = op.map(TumblingWindow::new).transpose()?;
        let mut map = self.pipelines.lock().expect("sdum poisoned");
        if map.contains_key(service_id) {
            return Err(SdumError::AlreadyActive(service_id.to_string()));
        }
        map.insert(
            service_id.clone(),
            Arc::new(Pipeline {
                id: service_id.clone(),
                inputs: inputs.iter().cloned().collect(),
                meter: Meter::new(),
                state: Mutex::new(PipelineState {
                    window,
                    subscribers: Vec::new(),
                    stopped: false,
                }),
            }),
        );
        Ok(())
    }

    fn pipeline(&self, id: &Iri) -> Option<Arc<Pipeline>> {
        self.pipelines.lock().expect("sdum poisoned").get(id).cloned()
    }

    pub fn is_active(&self, id: &Iri) -> bool {
        self.pipeline(id)
            .is_some_and(|p| !p.state.lock().expect("pipeline poisoned").stopped)
    }

    pub fn deliver(&self, service_id: &Iri) -> Result<Subscription, SdumError> {
        let p = self
            .pipeline(service_id)
            .ok_or_else(|| SdumError::NotActive(service_id.to_string()))?;
        let (tx, rx) = mpsc::channel();
        let mut state = p.state.lock().expect("pipeline poisoned");
        if state.stopped {
            let _ = tx.send(Delivery::EndOfStream);
        } else {
            state.subscribers.push(tx);
        }
        Ok(Subscription { rx })
    }

    /// Routes a tuple to every active service that consumes its stream.
    pub fn offer(&self, tuple: &StreamTuple) {
        self.offered.incr();
        let targets: Vec<Arc<Pipeline>> = self
            .pipelines
            .lock()
            .expect("sdum poisoned")
            .values()
            .filter(|p| p.inputs.contains(&tuple.stream_id))
            .cloned()
            .collect();
        for p in targets {
            let mut state = p.state.lock().expect("pipeline poisoned");
            if state.stopped {
                continue;
            }
            let items: Vec<Delivery> = match state.window.as_mut() {
                Some(w) => w.push(tuple).into_iter().map(Delivery::Aggregate).collect(),
                None => vec![Delivery::Tuple(tuple.clone())],
            };
            for item in items {
                p.send(&mut state, item, tuple.timestamp, &self.delivered);
            }
        }
    }

    /// Flushes the final window, signals end-of-stream and freezes the meter.
    /// Stopping twice is a no-op.
    pub fn stop(&self, service_id: &Iri) -> Result<(), SdumError> {
        let p = self
            .pipeline(service_id)
            .ok_or_else(|| SdumError::NotActive(service_id.to_string()))?;
        let mut state = p.state.lock().expect("pipeline poisoned");
        if state.stopped {
            return Ok(());
        }
        if let Some(last) = state.window.as_mut().and_then(TumblingWindow::finish) {
            let ts = last.window.map_or(0, |w| w.1);
            p.send(&mut state, Delivery::Aggregate(last), ts, &self.delivered);
        }
        for tx in state.subscribers.drain(..) {
            let _ = tx.send(Delivery::EndOfStream);
        }
        state.stopped = true;
        Ok(())
    }

    pub fn get_utility(&self, service_id: &Iri) -> Result<UtilityRecord, SdumError> {
        let p = self
            .pipeline(service_id)
            .ok_or_else(|| SdumError::NotActive(service_id.to_string()))?;
        Ok(p.meter.snapshot(p.id.as_str()))
    }

    /// Sum of tuples delivered across all services.
    pub fn total_delivered(&self) -> u64 {
        self.pipelines
            .lock()
            .expect("sdum poisoned")
            .values()
            .map(|p| p.meter.tuples.load(Ordering::Relaxed))
            .sum()
    }
}
