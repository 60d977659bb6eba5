use std::collections::hash_map::DefaultHasher;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::hash::{Hash, Hasher};
use std::io::BufReader;
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::ops::Deref;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use super::link::Link;
use super::topology::{NodeDescriptor, NodeRole, PeerRef};
use super::wire::{body_field, read_frame, write_frame, Frame};
use super::{error_frame, remote_error, FederatedAnswer, FederatedQuery, FederationError};
use crate::auth::{Authenticator, Role};
use crate::exec::{self, ExecMode};
use crate::ingestion::{load_replay, StreamTuple};
use crate::monitoring::{now_ms, write_csv, Component, Counter, Metrics, Monitor};
use crate::node::NodeId;
use crate::osdspec::{parse_osdspec, OsdSpec};
use crate::registry::{Registry, ServiceStatus};
use crate::scheduler::Scheduler;
use crate::sdum::{merge_all, AggKind, MergeableAggregate, Sdum};
use crate::store::{Iri, Store};

/// Below this many tuples a local fold stays on the calling thread.
const PARALLEL_FOLD_MIN: usize = 16 * 1024;
/// Aggregate records per PUSH frame.
const PUSH_BATCH: usize = 4096;
const PUSH_TIMEOUT: Duration = Duration::from_secs(10);

/// Tuples and payload bytes that crossed one edge, counted at the receiver.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct EdgeTraffic {
    pub tuples: u64,
    pub bytes: u64,
}

/// A service found by DISCOVER: `id,node,status,cap1;cap2` on the wire.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct ServiceSummary {
    pub id: Iri,
    pub node: NodeId,
    pub status: ServiceStatus,
    pub capabilities: BTreeSet<String>,
}

impl ServiceSummary {
    pub fn to_line(&self) -> String {
        let caps: Vec<&str> = self.capabilities.iter().map(String::as_str).collect();
        format!("{},{},{},{}", self.id, self.node, self.status.as_str(), caps.join(";"))
    }

    pub fn from_line(line: &str) -> Result<Self, FederationError> {
        let bad = || FederationError::Invalid(format!("bad service line `{line}`"));
        let mut parts = line.rsplitn(4, ',');
        let caps = parts.next().ok_or_else(bad)?;
        let status = parts.next().ok_or_else(bad)?;
        let node = parts.next().ok_or_else(bad)?;
        let id = parts.next().ok_or_else(bad)?;
        Ok(ServiceSummary {
            id: Iri::new(id).map_err(|_| bad())?,
            node: NodeId::new(node).map_err(|_| bad())?,
            status: status.parse().map_err(|_| bad())?,
            capabilities: caps.split(';').filter(|c| !c.is_empty()).map(str::to_string).collect(),
        })
    }
}

/// What a leaf sent in [`Node::stream_up`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PushReport {
    pub input: u64,
    pub sent: u64,
}

/// Everything that reached a top node for one capability.
#[derive(Clone, Debug, PartialEq)]
pub struct PushResult {
    pub aggregate: MergeableAggregate,
    pub records: u64,
    /// Every child has sent its final batch.
    pub complete: bool,
}

struct PushState {
    window: usize,
    kind: AggKind,
    buffer: Vec<MergeableAggregate>,
    finals: BTreeSet<NodeId>,
    received: u64,
    sent: u64,
    results: Vec<MergeableAggregate>,
    done: bool,
}

struct Counters {
    queries: Counter,
    forwarded: Counter,
    partials: Counter,
    rejected: Counter,
    protocol_errors: Counter,
    push_in: Counter,
    push_out: Counter,
}

/// One analytics node: a registry, scheduler and delivery manager over a
/// local store, plus per-capability tuple data and links to its peers.
pub struct Node {
    id: NodeId,
    role: NodeRole,
    desc: RwLock<NodeDescriptor>,
    auth: Authenticator,
    store: Arc<Store>,
    registry: Arc<Registry>,
    sdum: Arc<Sdum>,
    scheduler: Scheduler,
    metrics: Arc<Metrics>,
    monitor: Arc<Monitor>,
    data: RwLock<HashMap<String, Vec<StreamTuple>>>,
    links: RwLock<BTreeMap<NodeId, Arc<Link>>>,
    push: Mutex<BTreeMap<String, PushState>>,
    traffic: Mutex<BTreeMap<(NodeId, NodeId), EdgeTraffic>>,
    seq: AtomicU64,
    counters: Counters,
}

impl Node {
    /// Builds a node without binding a socket. Hosted services are
    /// registered and their replay files loaded.
    pub fn new(desc: NodeDescriptor) -> Result<Arc<Node>, FederationError> {
        desc.validate()?;
        let metrics = Metrics::new(desc.node_id.clone());
        let store = Arc::new(Store::new());
        let registry = Arc::new(Registry::new(Arc::clone(&store)));
        let sdum = Arc::new(Sdum::new(Some(&metrics)));
        let auth = Authenticator::new(desc.tokens.clone());
        let scheduler = Scheduler::new(
            desc.node_id.clone(),
            Arc::clone(&registry),
            Arc::clone(&sdum),
            auth.clone(),
            Some(&metrics),
        );
        let counter = |name: &str| metrics.counter(Component::Federation, name);
        let counters = Counters {
            queries: counter("queries"),
            forwarded: counter("queries_forwarded"),
            partials: counter("partials_received"),
            rejected: counter("auth_rejected"),
            protocol_errors: counter("protocol_errors"),
            push_in: counter("push_records_in"),
            push_out: counter("push_records_out"),
        };
        let mut links = BTreeMap::new();
        for peer in desc.children.iter().chain(desc.parent.iter()) {
            links.insert(peer.id.clone(), Arc::new(Link::new(&peer.address)));
        }
        let node = Node {
            id: desc.node_id.clone(),
            role: desc.role,
            auth,
            store,
            registry,
            sdum,
            scheduler,
            monitor: Monitor::new(Arc::clone(&metrics)),
            metrics,
            data: RwLock::new(HashMap::new()),
            links: RwLock::new(links),
            push: Mutex::new(BTreeMap::new()),
            traffic: Mutex::new(BTreeMap::new()),
            seq: AtomicU64::new(0),
            counters,
            desc: RwLock::new(desc.clone()),
        };
        for s in &desc.services {
            let spec = OsdSpec::single(&s.capability, vec!["SELECT ?s WHERE { ?s ?p ?o }".to_string()]);
            node.registry
                .register_service(&spec, &[s.capability.as_str()], &node.id)
                .map_err(|e| FederationError::Invalid(e.to_string()))?;
            if let Some(path) = &s.replay {
                let rows = load_replay(path).map_err(|e| FederationError::Invalid(format!("{}: {e}", path.display())))?;
                node.ingest_values(&s.capability, &rows);
            }
        }
        Ok(Arc::new(node))
    }

    pub fn id(&self) -> &NodeId {
        &self.id
    }

    pub fn role(&self) -> NodeRole {
        self.role
    }

    pub fn descriptor(&self) -> NodeDescriptor {
        self.desc.read().expect("node poisoned").clone()
    }

    pub fn store(&self) -> &Arc<Store> {
        &self.store
    }

    pub fn registry(&self) -> &Arc<Registry> {
        &self.registry
    }

    pub fn scheduler(&self) -> &Scheduler {
        &self.scheduler
    }

    pub fn sdum(&self) -> &Arc<Sdum> {
        &self.sdum
    }

    pub fn metrics(&self) -> &Arc<Metrics> {
        &self.metrics
    }

    pub fn monitor(&self) -> &Arc<Monitor> {
        &self.monitor
    }

    pub fn authenticator(&self) -> &Authenticator {
        &self.auth
    }

    /// Points the link to peer `id` at a new address.
    pub fn update_peer(&self, id: &NodeId, address: &str) {
        let mut guard = self.desc.write().expect("node poisoned");
        let desc = &mut *guard;
        for p in desc.children.iter_mut().chain(desc.parent.iter_mut()) {
            if p.id == *id {
                p.address = address.to_string();
            }
        }
        if let Some(link) = self.links.read().expect("node poisoned").get(id) {
            link.set_address(address);
        }
    }

    fn link(&self, id: &NodeId) -> Option<Arc<Link>> {
        self.links.read().expect("node poisoned").get(id).cloned()
    }

    fn next_query_id(&self) -> String {
        format!("{}:{}", self.id, self.seq.fetch_add(1, Ordering::Relaxed))
    }

    /// Adds tuples for `capability`, keeping them ordered by timestamp.
    pub fn ingest(&self, capability: &str, tuples: impl IntoIterator<Item = StreamTuple>) {
        let mut data = self.data.write().expect("node poisoned");
        let list = data.entry(capability.to_string()).or_default();
        list.extend(tuples);
        list.sort_by_key(|t| t.timestamp);
    }

    pub fn ingest_values(&self, capability: &str, rows: &[(u64, f64)]) {
        let stream = Iri::new(format!("urn:hierion:stream:{}:{capability}", self.id)).expect("node ids and capabilities form valid IRIs");
        self.ingest(capability, rows.iter().map(|&(ts, v)| StreamTuple::new(stream.clone(), ts, v)));
    }

    pub fn local_len(&self, capability: &str) -> usize {
        self.data.read().expect("node poisoned").get(capability).map_or(0, Vec::len)
    }

    /// This node's own contribution to `q`, ignoring children.
    pub fn local_aggregate(&self, q: &FederatedQuery) -> MergeableAggregate {
        let data = self.data.read().expect("node poisoned");
        let Some(all) = data.get(&q.capability) else {
            return MergeableAggregate::empty(q.kind);
        };
        let slice = match (q.window_ms, q.as_of) {
            (Some(w), Some(as_of)) => {
                let lo = all.partition_point(|t| t.timestamp < as_of.saturating_sub(w));
                let hi = all.partition_point(|t| t.timestamp <= as_of);
                &all[lo..hi.max(lo)]
            }
            _ => &all[..],
        };
        let mode = if slice.len() >= PARALLEL_FOLD_MIN { ExecMode::preferred() } else { ExecMode::Sequential };
        let kind = q.kind;
        exec::fold_reduce(
            mode,
            slice,
            || MergeableAggregate::empty(kind),
            |mut acc, t| {
                acc.push(t.timestamp, t.value);
                acc
            },
            |a, b| a.merge(&b).expect("same kind"),
        )
    }

    /// Runs `q` over this node's subtree. Needs a consumer or admin token.
    pub fn execute(&self, q: &FederatedQuery, token: Option<&str>) -> Result<FederatedAnswer, FederationError> {
        self.auth.require(token, Role::Consumer)?;
        q.validate()?;
        Ok(self.execute_inner(q))
    }

    fn record_traffic(&self, from: &NodeId, tuples: u64, bytes: u64) {
        let mut t = self.traffic.lock().expect("node poisoned");
        let e = t.entry((from.clone(), self.id.clone())).or_default();
        e.tuples += tuples;
        e.bytes += bytes;
    }

    fn execute_inner(&self, q: &FederatedQuery) -> FederatedAnswer {
        self.counters.queries.incr();
        let started = Instant::now();
        let deadline_at = started + q.deadline;
        let mut q = q.clone();
        if q.window_ms.is_some() && q.as_of.is_none() {
            q.as_of = Some(now_ms());
        }
        let children: Vec<PeerRef> = self
            .desc
            .read()
            .expect("node poisoned")
            .children
            .iter()
            .filter(|c| q.scope.includes(&c.id))
            .cloned()
            .collect();
        // Leave a fifth of our budget for the replies to travel back.
        let child_deadline = (q.deadline - q.deadline / 5).max(Duration::from_millis(1));
        let mut waiting = Vec::new();
        for child in &children {
            let fq = FederatedQuery {
                query_id: self.next_query_id(),
                scope: super::Scope::All,
                deadline: child_deadline,
                ..q.clone()
            };
            let frame = Frame::new("QUERY")
                .header("query-id", fq.query_id.clone())
                .header("token", child.token.clone())
                .header("node-id", self.id.as_str())
                .with_body(fq.to_body());
            let Some(link) = self.link(&child.id) else { continue };
            if let Ok(rx) = link.request(&frame) {
                self.counters.forwarded.incr();
                waiting.push((child.id.clone(), fq.query_id, rx));
            }
        }
        let mut aggregate = self.local_aggregate(&q);
        let (mut answered, mut hops, mut complete) = (0usize, 0u32, true);
        for (child, qid, rx) in waiting {
            let remaining = deadline_at.saturating_duration_since(Instant::now());
            let Ok(reply) = rx.recv_timeout(remaining) else { continue };
            if reply.kind() != "RESULT" {
                continue;
            }
            let Ok(part) = FederatedAnswer::from_body(&qid, &reply.body) else { continue };
            let Ok(merged) = aggregate.merge(&part.aggregate) else { continue };
            self.record_traffic(&child, 1, reply.body.len() as u64);
            self.counters.partials.incr();
            aggregate = merged;
            answered += 1;
            complete &= part.complete;
            hops = hops.max(part.hops + 1);
        }
        FederatedAnswer {
            query_id: q.query_id.clone(),
            origin: self.id.clone(),
            aggregate,
            answered,
            total: children.len(),
            hops,
            complete: complete && answered == children.len(),
        }
    }

    /// Services advertising `capability` here and anywhere below.
    pub fn discover(&self, capability: &str, token: Option<&str>) -> Result<Vec<ServiceSummary>, FederationError> {
        self.auth.require(token, Role::Consumer)?;
        self.discover_inner(capability, Duration::from_secs(2))
    }

    fn discover_inner(&self, capability: &str, deadline: Duration) -> Result<Vec<ServiceSummary>, FederationError> {
        if capability.is_empty() || capability.contains(['\n', ',']) {
            return Err(FederationError::Invalid(format!("bad capability `{capability}`")));
        }
        let deadline_at = Instant::now() + deadline;
        let children = self.desc.read().expect("node poisoned").children.clone();
        let mut waiting = Vec::new();
        for child in &children {
            let frame = Frame::new("DISCOVER")
                .header("query-id", self.next_query_id())
                .header("token", child.token.clone())
                .header("node-id", self.id.as_str())
                .with_body(format!(
                    "capability={capability}\ndeadline_ms={}\n",
                    (deadline - deadline / 5).as_millis().max(1)
                ));
            if let Some(rx) = self.link(&child.id).and_then(|l| l.request(&frame).ok()) {
                waiting.push(rx);
            }
        }
        let mut out: BTreeSet<ServiceSummary> = self
            .registry
            .discover_services(capability, None)
            .map_err(|e| FederationError::Invalid(e.to_string()))?
            .into_iter()
            .map(|r| ServiceSummary {
                id: r.id,
                node: r.node,
                status: r.status,
                capabilities: r.capabilities,
            })
            .collect();
        for rx in waiting {
            let remaining = deadline_at.saturating_duration_since(Instant::now());
            let Ok(reply) = rx.recv_timeout(remaining) else { continue };
            if reply.kind() != "SERVICES" {
                continue;
            }
            for line in reply.body.lines().filter(|l| !l.is_empty()) {
                if let Ok(s) = ServiceSummary::from_line(line) {
                    out.insert(s);
                }
            }
        }
        Ok(out.into_iter().collect())
    }

    /// Windows this node's raw data for `capability` into aggregates of
    /// `window` tuples and pushes them to the parent, ending with a final
    /// batch.
    pub fn stream_up(&self, capability: &str, window: usize, kind: AggKind) -> Result<PushReport, FederationError> {
        if window == 0 {
            return Err(FederationError::Invalid("window must be positive".into()));
        }
        if self.role != NodeRole::Leaf {
            return Err(FederationError::Invalid("only leaves stream raw data upward".into()));
        }
        let records: Vec<MergeableAggregate> = {
            let data = self.data.read().expect("node poisoned");
            let tuples = data.get(capability).map_or(&[][..], |v| &v[..]);
            exec::map_chunks(ExecMode::preferred(), tuples, window, |c| MergeableAggregate::of(kind, c))
        };
        let input = records.iter().map(|r| r.count).sum();
        let batches: Vec<&[MergeableAggregate]> =
            if records.is_empty() { vec![&[][..]] } else { records.chunks(PUSH_BATCH).collect() };
        let last = batches.len() - 1;
        for (i, batch) in batches.into_iter().enumerate() {
            self.send_push(capability, window, batch, i == last)?;
        }
        Ok(PushReport {
            input,
            sent: records.len() as u64,
        })
    }

    fn send_push(&self, capability: &str, window: usize, records: &[MergeableAggregate], last: bool) -> Result<(), FederationError> {
        let parent = self
            .desc
            .read()
            .expect("node poisoned")
            .parent
            .clone()
            .ok_or_else(|| FederationError::Invalid("node has no parent".into()))?;
        let mut body = String::new();
        for r in records {
            body.push_str(&r.to_record());
            body.push('\n');
        }
        let frame = Frame::new("PUSH")
            .header("query-id", self.next_query_id())
            .header("token", parent.token.clone())
            .header("node-id", self.id.as_str())
            .header("capability", capability)
            .header("window", window.to_string())
            .header("final", last.to_string())
            .with_body(body);
        let link = self.link(&parent.id).expect("parent link exists");
        let reply = link.request(&frame)?.recv_timeout(PUSH_TIMEOUT).map_err(|_| FederationError::Timeout)?;
        if reply.kind() != "ACK" {
            return Err(remote_error(&reply));
        }
        self.counters.push_out.add(records.len() as u64);
        Ok(())
    }

    fn handle_push(&self, req: &Frame) -> Result<Frame, FederationError> {
        let bad = |m: String| FederationError::Invalid(m);
        let sender = req
            .node_id()
            .and_then(|n| NodeId::new(n).ok())
            .ok_or_else(|| bad("PUSH without node-id".into()))?;
        let (children, parent): (Vec<NodeId>, bool) = {
            let d = self.desc.read().expect("node poisoned");
            (d.children.iter().map(|c| c.id.clone()).collect(), d.parent.is_some())
        };
        if !children.contains(&sender) {
            return Err(bad(format!("`{sender}` is not a child of `{}`", self.id)));
        }
        let capability = req.get("capability").filter(|c| !c.is_empty()).ok_or_else(|| bad("PUSH without capability".into()))?;
        let window: usize = req
            .get("window")
            .and_then(|w| w.parse().ok())
            .filter(|&w| w > 0)
            .ok_or_else(|| bad("PUSH without a positive window".into()))?;
        let last = match req.get("final") {
            Some("true") => true,
            Some("false") | None => false,
            Some(other) => return Err(bad(format!("bad final flag `{other}`"))),
        };
        let records = req
            .body
            .lines()
            .filter(|l| !l.is_empty())
            .map(MergeableAggregate::from_record)
            .collect::<Result<Vec<_>, _>>()?;
        let mut push = self.push.lock().expect("node poisoned");
        let kind = match push.get(capability) {
            Some(s) => s.kind,
            None => records.first().map_or(AggKind::Avg, |r| r.kind),
        };
        if let Some(s) = push.get(capability) {
            if s.window != window {
                return Err(bad(format!("window {window} differs from {} already in use", s.window)));
            }
            if s.finals.contains(&sender) {
                return Err(bad(format!("`{sender}` already sent its final batch")));
            }
        }
        if records.iter().any(|r| r.kind != kind) {
            return Err(bad("mixed aggregate kinds".into()));
        }
        // Everything is validated; from here on the push is applied.
        self.record_traffic(&sender, records.len() as u64, req.body.len() as u64);
        self.counters.push_in.add(records.len() as u64);
        let state = push.entry(capability.to_string()).or_insert_with(|| PushState {
            window,
            kind,
            buffer: Vec::new(),
            finals: BTreeSet::new(),
            received: 0,
            sent: 0,
            results: Vec::new(),
            done: false,
        });
        state.received += records.len() as u64;
        let mut outgoing = Vec::new();
        if parent {
            for r in records {
                state.buffer.push(r);
                if state.buffer.len() == window {
                    outgoing.push(merge_all(kind, &state.buffer)?);
                    state.buffer.clear();
                }
            }
        } else {
            state.results.extend(records);
        }
        if last {
            state.finals.insert(sender);
        }
        let all_final = children.iter().all(|c| state.finals.contains(c));
        let mut send_final = false;
        if all_final && !state.done {
            state.done = true;
            if parent {
                if !state.buffer.is_empty() {
                    outgoing.push(merge_all(kind, &state.buffer)?);
                    state.buffer.clear();
                }
                send_final = true;
            }
        }
        if parent && (!outgoing.is_empty() || send_final) {
            state.sent += outgoing.len() as u64;
            // Held across the send so batches reach the parent in order.
            self.send_push(capability, window, &outgoing, send_final)?;
        }
        Ok(Frame::new("ACK").with_body(format!("accepted={}\n", state.received)))
    }

    /// What has reached this node by PUSH for `capability`. Only nodes
    /// without a parent keep the records.
    pub fn push_result(&self, capability: &str) -> Option<PushResult> {
        let push = self.push.lock().expect("node poisoned");
        let s = push.get(capability)?;
        Some(PushResult {
            aggregate: merge_all(s.kind, &s.results).expect("one kind per capability"),
            records: s.received,
            complete: s.done,
        })
    }

    /// Per-edge counters for traffic arriving here. Every child edge is
    /// listed, idle ones as zero.
    pub fn measure_edge_traffic(&self) -> BTreeMap<(NodeId, NodeId), EdgeTraffic> {
        let mut out = self.traffic.lock().expect("node poisoned").clone();
        for c in &self.desc.read().expect("node poisoned").children {
            out.entry((c.id.clone(), self.id.clone())).or_default();
        }
        out
    }

    /// Clears edge counters and push state between experiment runs.
    pub fn reset_traffic(&self) {
        self.traffic.lock().expect("node poisoned").clear();
        self.push.lock().expect("node poisoned").clear();
    }

    /// Hash of everything a request could change: the store, reservations,
    /// local data, push state and edge counters. Metrics are left out since
    /// they count rejected requests too.
    pub fn state_digest(&self) -> u64 {
        let mut h = DefaultHasher::new();
        let mut quads: Vec<String> = self.store.quads().iter().map(|(g, t)| format!("{g:?} {t:?}")).collect();
        quads.sort();
        quads.hash(&mut h);
        for r in self.scheduler.reservations() {
            (r.id.0, r.holder.as_str(), r.units).hash(&mut h);
            for s in &r.stream_ids {
                s.as_str().hash(&mut h);
            }
        }
        {
            let data = self.data.read().expect("node poisoned");
            let mut keys: Vec<&String> = data.keys().collect();
            keys.sort();
            for k in keys {
                k.hash(&mut h);
                for t in &data[k] {
                    (t.stream_id.as_str(), t.timestamp, t.value.to_bits()).hash(&mut h);
                }
            }
        }
        for (cap, s) in self.push.lock().expect("node poisoned").iter() {
            (cap, s.window, s.received, s.sent, s.done, &s.finals).hash(&mut h);
            for r in s.buffer.iter().chain(&s.results) {
                r.to_record().hash(&mut h);
            }
        }
        for ((from, to), e) in self.traffic.lock().expect("node poisoned").iter() {
            (from, to, e.tuples, e.bytes).hash(&mut h);
        }
        h.finish()
    }

    /// Decodes one length-prefixed request and returns the encoded reply.
    pub fn handle_remote(&self, bytes: &[u8]) -> Vec<u8> {
        let reply = match read_frame(&mut &bytes[..]) {
            Ok(Some(req)) => self.dispatch(&req),
            Ok(None) => error_frame(None, "protocol", "empty message"),
            Err(e) => {
                self.counters.protocol_errors.incr();
                error_frame(None, "protocol", &e.to_string())
            }
        };
        reply.encode()
    }

    /// Produces exactly one reply for `req`, echoing its query-id.
    pub fn dispatch(&self, req: &Frame) -> Frame {
        let Some(qid) = req.query_id() else {
            self.counters.protocol_errors.incr();
            return error_frame(None, "protocol", "request without query-id");
        };
        let role = match self.auth.verify(req.token()) {
            Ok(role) => role,
            Err(e) => {
                self.counters.rejected.incr();
                return error_frame(Some(qid), "auth", &e.to_string());
            }
        };
        let need = match req.kind() {
            "QUERY" | "PING" | "DISCOVER" | "METRICS" => Role::Consumer,
            "SUBMIT" | "PUSH" => Role::Admin,
            other => {
                self.counters.protocol_errors.incr();
                return error_frame(Some(qid), "protocol", &format!("unknown message type `{other}`"));
            }
        };
        if role < need {
            self.counters.rejected.incr();
            return error_frame(Some(qid), "auth", &crate::auth::AuthError::Forbidden { have: role, need }.to_string());
        }
        match self.dispatch_authorized(req) {
            Ok(reply) => reply.header("query-id", qid).header("node-id", self.id.as_str()),
            Err(e) => error_frame(Some(qid), e.code(), &e.to_string()),
        }
    }

    fn dispatch_authorized(&self, req: &Frame) -> Result<Frame, FederationError> {
        match req.kind() {
            "QUERY" => {
                let q = FederatedQuery::from_body(req.query_id().unwrap_or(""), &req.body)?;
                Ok(Frame::new("RESULT").with_body(self.execute_inner(&q).to_body()))
            }
            "PING" => Ok(Frame::new("PONG").with_body(format!("node={}\nrole={}\n", self.id, self.role))),
            "SUBMIT" => {
                let spec = parse_osdspec(&req.body).map_err(|e| FederationError::Invalid(e.to_string()))?;
                let caps: Vec<&str> = req.get("capabilities").map_or(vec![], |c| c.split(',').filter(|c| !c.is_empty()).collect());
                let inst = self
                    .scheduler
                    .submit_with_capabilities(&spec, req.token(), &caps)
                    .map_err(|e| FederationError::Invalid(e.to_string()))?;
                Ok(Frame::new("SUBMITTED").with_body(format!(
                    "service_id={}\nstate={}\nstreams={}\n",
                    inst.service_id,
                    inst.state,
                    inst.resolved_streams.len()
                )))
            }
            "DISCOVER" => {
                let cap = body_field(&req.body, "capability").unwrap_or("");
                let deadline = match body_field(&req.body, "deadline_ms") {
                    Some(d) => Duration::from_millis(
                        d.parse().ok().filter(|&d| d > 0).ok_or_else(|| FederationError::Invalid(format!("bad deadline `{d}`")))?,
                    ),
                    None => Duration::from_secs(2),
                };
                let lines: Vec<String> = self.discover_inner(cap, deadline)?.iter().map(ServiceSummary::to_line).collect();
                Ok(Frame::new("SERVICES").with_body(lines.iter().map(|l| format!("{l}\n")).collect::<String>()))
            }
            "PUSH" => self.handle_push(req),
            "METRICS" => {
                let mut out = Vec::new();
                write_csv(&self.monitor.sample(), &mut out)?;
                Ok(Frame::new("METRICS-DATA").with_body(String::from_utf8(out).expect("CSV is UTF-8")))
            }
            other => unreachable!("`{other}` is filtered in dispatch"),
        }
    }

    fn close_links(&self) {
        for link in self.links.read().expect("node poisoned").values() {
            link.close();
        }
    }
}

/// A node answering the wire protocol on a TCP listener. Dropping the
/// handle shuts the node down.
pub struct NodeHandle {
    node: Arc<Node>,
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    accept: Option<JoinHandle<()>>,
    conns: Arc<Mutex<HashMap<u64, TcpStream>>>,
}

impl Deref for NodeHandle {
    type Target = Node;

    fn deref(&self) -> &Node {
        &self.node
    }
}

impl NodeHandle {
    pub fn node(&self) -> &Arc<Node> {
        &self.node
    }

    pub fn address(&self) -> SocketAddr {
        self.addr
    }

    pub fn shutdown(mut self) {
        self.stop_now();
    }

    fn stop_now(&mut self) {
        if self.stop.swap(true, Ordering::SeqCst) {
            return;
        }
        // Wake the accept loop so it sees the flag.
        let _ = TcpStream::connect_timeout(&self.addr, Duration::from_millis(200));
        if let Some(t) = self.accept.take() {
            let _ = t.join();
        }
        for (_, c) in self.conns.lock().expect("node poisoned").drain() {
            let _ = c.shutdown(Shutdown::Both);
        }
        self.node.close_links();
    }
}

impl Drop for NodeHandle {
    fn drop(&mut self) {
        self.stop_now();
    }
}

/// Binds `desc.address` (port 0 picks a free port) and starts serving.
pub fn serve(desc: NodeDescriptor) -> Result<NodeHandle, FederationError> {
    let listener = TcpListener::bind(&desc.address)?;
    let addr = listener.local_addr()?;
    let node = Node::new(desc)?;
    node.desc.write().expect("node poisoned").address = addr.to_string();
    let stop = Arc::new(AtomicBool::new(false));
    let conns: Arc<Mutex<HashMap<u64, TcpStream>>> = Arc::new(Mutex::new(HashMap::new()));
    let accept = {
        let (node, stop, conns) = (Arc::clone(&node), Arc::clone(&stop), Arc::clone(&conns));
        std::thread::spawn(move || {
            let mut next = 0u64;
            for stream in listener.incoming() {
                if stop.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(stream) = stream else { continue };
                let Ok(clone) = stream.try_clone() else { continue };
                let id = next;
                next += 1;
                conns.lock().expect("node poisoned").insert(id, clone);
                let (node, conns) = (Arc::clone(&node), Arc::clone(&conns));
                std::thread::spawn(move || {
                    serve_connection(&node, stream);
                    conns.lock().expect("node poisoned").remove(&id);
                });
            }
        })
    };
    Ok(NodeHandle {
        node,
        addr,
        stop,
        accept: Some(accept),
        conns,
    })
}

fn serve_connection(node: &Arc<Node>, stream: TcpStream) {
    let _ = stream.set_nodelay(true);
    let Ok(writer) = stream.try_clone() else { return };
    let writer = Arc::new(Mutex::new(writer));
    let send = |w: &Mutex<TcpStream>, f: &Frame| {
        let _ = write_frame(&mut *w.lock().expect("writer poisoned"), f);
    };
    let mut reader = BufReader::new(stream);
    loop {
        match read_frame(&mut reader) {
            Ok(None) => break,
            Ok(Some(req)) if req.node_id().is_some() => {
                // Peers multiplex many requests on one socket; answer each
                // on its own thread so a slow subtree does not block others.
                let (node, writer) = (Arc::clone(node), Arc::clone(&writer));
                std::thread::spawn(move || {
                    let reply = node.dispatch(&req);
                    send(&writer, &reply);
                });
            }
            Ok(Some(req)) => send(&writer, &node.dispatch(&req)),
            Err(e) => {
                node.counters.protocol_errors.incr();
                send(&writer, &error_frame(None, "protocol", &e.to_string()));
                break;
            }
        }
    }
    let _ = reader.get_ref().shutdown(Shutdown::Both);
}
