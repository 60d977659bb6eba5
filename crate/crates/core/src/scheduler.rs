//! Turns service descriptions into running services: resolves the streams
//! their queries select, reserves those streams, and hands active services
//! to delivery.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use crate::auth::{AuthError, Authenticator, Role};
use crate::ingestion::stream_id;
use crate::monitoring::{Component, Counter, Metrics};
use crate::node::NodeId;
use crate::osdspec::{self, OsdSpec};
use crate::registry::{Registry, RegistryError, ServiceStatus};
use crate::sdum::{AnalyticOpSpec, Sdum, SdumError};
use crate::sparql::{self, ParseError, QueryError};
use crate::store::Iri;

pub const NO_CONTRIBUTING_SENSORS: &str = "no contributing sensors";

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum InstanceState {
    Pending,
    Reserved,
    Active,
    Stopped,
    Failed(String),
}

impl fmt::Display for InstanceState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InstanceState::Pending => f.write_str("pending"),
            InstanceState::Reserved => f.write_str("reserved"),
            InstanceState::Active => f.write_str("active"),
            InstanceState::Stopped => f.write_str("stopped"),
            InstanceState::Failed(why) => write!(f, "failed({why})"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ReservationId(pub u64);

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Reservation {
    pub id: ReservationId,
    pub stream_ids: Vec<Iri>,
    pub holder: Iri,
    pub units: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ServiceInstance {
    /// Registry IRI once registered; a request IRI for failed submissions.
    pub service_id: Iri,
    pub spec: OsdSpec,
    pub resolved_streams: Vec<Iri>,
    pub reservation: Option<ReservationId>,
    pub state: InstanceState,
}

#[derive(Debug, thiserror::Error)]
pub enum SchedulerError {
    #[error(transparent)]
    Auth(#[from] AuthError),
    #[error("invalid service description: {0}")]
    Validation(String),
    #[error("{path}: {error}")]
    Parse { path: String, error: ParseError },
    #[error("{path}: query failed: {error}")]
    Query { path: String, error: QueryError },
    #[error("{path}: unsupported schedule `{schedule}`")]
    UnsupportedSchedule { path: String, schedule: String },
    #[error("capacity exceeded on {}", .0.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(", "))]
    Capacity(Vec<Iri>),
    #[error("service `{0}` is unknown")]
    UnknownService(String),
    #[error("service `{id}` is {state}; expected {expected}")]
    WrongState { id: String, state: InstanceState, expected: &'static str },
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error(transparent)]
    Sdum(#[from] SdumError),
}

#[derive(Default)]
struct Reservations {
    capacity: HashMap<Iri, u64>,
    used: HashMap<Iri, u64>,
    held: BTreeMap<ReservationId, Reservation>,
    next: u64,
}

pub struct Scheduler {
    node: NodeId,
    registry: Arc<Registry>,
    sdum: Arc<Sdum>,
    auth: Authenticator,
    reservations: Mutex<Reservations>,
    instances: Mutex<HashMap<Iri, ServiceInstance>>,
    next_request: AtomicU64,
    submitted: Counter,
    failed: Counter,
}

impl Scheduler {
    pub fn new(node: NodeId, registry: Arc<Registry>, sdum: Arc<Sdum>, auth: Authenticator, metrics: Option<&Metrics>) -> Self {
        let counter = |n: &str| metrics.map_or_else(Counter::default, |m| m.counter(Component::Scheduler, n));
        Scheduler {
            node,
            registry,
            sdum,
            auth,
            reservations: Mutex::new(Reservations::default()),
            instances: Mutex::new(HashMap::new()),
            next_request: AtomicU64::new(0),
            submitted: counter("requests_submitted"),
            failed: counter("requests_failed"),
        }
    }

    /// Limits a stream to `units` concurrent reservation units.
    pub fn set_capacity(&self, stream: &Iri, units: u64) {
        let mut r = self.reservations.lock().expect("reservations poisoned");
        r.capacity.insert(stream.clone(), units);
    }

    /// Reserves `units` on every stream, or nothing at all.
    pub fn reserve(&self, holder: &Iri, streams: &[Iri], units: u64) -> Result<Reservation, SchedulerError> {
        let mut r = self.reservations.lock().expect("reservations poisoned");
        let contended: Vec<Iri> = streams
            .iter()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .filter(|s| {
                let cap = r.capacity.get(*s).copied().unwrap_or(u64::MAX);
                let used = r.used.get(*s).copied().unwrap_or(0);
                used.checked_add(units).is_none_or(|total| total > cap)
            })
            .cloned()
            .collect();
        if !contended.is_empty() {
            return Err(SchedulerError::Capacity(contended));
        }
        let unique: Vec<Iri> = streams.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
        for s in &unique {
            *r.used.entry(s.clone()).or_default() += units;
        }
        let id = ReservationId(r.next);
        r.next += 1;
        let reservation = Reservation {
            id,
            stream_ids: unique,
            holder: holder.clone(),
            units,
        };
        r.held.insert(id, reservation.clone());
        Ok(reservation)
    }

    /// Returns the units held by `id`. Unknown or already released ids are a no-op.
    pub fn release(&self, id: ReservationId) {
        let mut r = self.reservations.lock().expect("reservations poisoned");
        if let Some(res) = r.held.remove(&id) {
            for s in &res.stream_ids {
                if let Some(u) = r.used.get_mut(s) {
                    *u -= res.units;
                }
            }
        }
    }

    pub fn reserved_units(&self, stream: &Iri) -> u64 {
        let r = self.reservations.lock().expect("reservations poisoned");
        r.used.get(stream).copied().unwrap_or(0)
    }

    pub fn reservations(&self) -> Vec<Reservation> {
        let r = self.reservations.lock().expect("reservations poisoned");
        r.held.values().cloned().collect()
    }

    pub fn instance(&self, id: &Iri) -> Option<ServiceInstance> {
        self.instances.lock().expect("instances poisoned").get(id).cloned()
    }

    /// Streams of every registered sensor selected by the spec's queries.
    fn resolve(&self, spec: &OsdSpec) -> Result<Vec<Iri>, SchedulerError> {
        let mut parsed = Vec::new();
        for (i, j, osmo) in spec.osmos() {
            let path = format!("OAMO[{i}].OSMO[{j}]");
            if let Some(schedule) = osmo.query_controls.query_schedule.as_deref().filter(|s| !s.is_empty()) {
                return Err(SchedulerError::UnsupportedSchedule {
                    path: format!("{path}.queryControls.QuerySchedule"),
                    schedule: schedule.to_string(),
                });
            }
            for (k, q) in osmo.query_requests.iter().enumerate() {
                let ast = sparql::parse(q).map_err(|error| SchedulerError::Parse {
                    path: format!("{path}.queryRequests[{k}]"),
                    error,
                })?;
                parsed.push((format!("{path}.queryRequests[{k}]"), ast));
            }
        }
        let known: BTreeSet<Iri> = self.registry.sensors().into_iter().collect();
        let mut sensors = BTreeSet::new();
        for (path, ast) in parsed {
            let rows = sparql::evaluate(&ast, self.registry.store()).map_err(|e| SchedulerError::Query {
                path,
                error: e.into(),
            })?;
            for row in &rows.rows {
                for term in row {
                    if let Some(iri) = term.as_iri().filter(|i| known.contains(*i)) {
                        sensors.insert(iri.clone());
                    }
                }
            }
        }
        let mut streams = Vec::new();
        for s in sensors {
            let desc = self.registry.describe_sensor(&s)?;
            streams.extend(desc.observed_properties.iter().map(|p| stream_id(&s, p)));
        }
        Ok(streams)
    }

    /// Validates, resolves and reserves a service request. Requires an admin token.
    pub fn submit_request(&self, spec: &OsdSpec, token: Option<&str>) -> Result<ServiceInstance, SchedulerError> {
        self.submit_with_capabilities(spec, token, &[])
    }

    pub fn submit_with_capabilities(
        &self,
        spec: &OsdSpec,
        token: Option<&str>,
        capabilities: &[&str],
    ) -> Result<ServiceInstance, SchedulerError> {
        self.auth.require(token, Role::Admin)?;
        self.submitted.incr();
        let result = self.submit_inner(spec, capabilities);
        if !matches!(&result, Ok(i) if !matches!(i.state, InstanceState::Failed(_))) {
            self.failed.incr();
        }
        result
    }

    fn submit_inner(&self, spec: &OsdSpec, capabilities: &[&str]) -> Result<ServiceInstance, SchedulerError> {
        let diags = osdspec::validate(spec);
        if !diags.is_empty() {
            let text: Vec<String> = diags.iter().map(|d| d.to_string()).collect();
            return Err(SchedulerError::Validation(text.join("; ")));
        }
        let streams = self.resolve(spec)?;
        let report_if_empty = spec.osmos().any(|(_, _, o)| o.query_controls.report_if_empty);
        if streams.is_empty() && !report_if_empty {
            let n = self.next_request.fetch_add(1, Ordering::Relaxed);
            let failed = ServiceInstance {
                service_id: Iri::new(format!("urn:hierion:request:{}:{n}", self.node))
                    .expect("node ids are IRI-safe"),
                spec: spec.clone(),
                resolved_streams: Vec::new(),
                reservation: None,
                state: InstanceState::Failed(NO_CONTRIBUTING_SENSORS.into()),
            };
            return Ok(failed);
        }
        // Reserve against a placeholder holder first so that a capacity
        // failure leaves the registry untouched.
        let placeholder = Iri::new(format!("urn:hierion:pending:{}", self.node)).expect("node ids are IRI-safe");
        let reservation = self.reserve(&placeholder, &streams, 1)?;
        let service_id = match self
            .registry
            .register_service(spec, capabilities, &self.node)
            .and_then(|id| self.registry.set_service_status(&id, ServiceStatus::Scheduled).map(|_| id))
        {
            Ok(id) => id,
            Err(e) => {
                self.release(reservation.id);
                return Err(e.into());
            }
        };
        {
            let mut r = self.reservations.lock().expect("reservations poisoned");
            if let Some(held) = r.held.get_mut(&reservation.id) {
                held.holder = service_id.clone();
            }
        }
        let instance = ServiceInstance {
            service_id: service_id.clone(),
            spec: spec.clone(),
            resolved_streams: streams,
            reservation: Some(reservation.id),
            state: InstanceState::Reserved,
        };
        self.instances
            .lock()
            .expect("instances poisoned")
            .insert(service_id, instance.clone());
        Ok(instance)
    }

    /// Starts delivery of a reserved service, optionally windowing its output.
    pub fn activate(&self, service_id: &Iri, op: Option<&AnalyticOpSpec>) -> Result<ServiceInstance, SchedulerError> {
        let mut map = self.instances.lock().expect("instances poisoned");
        let inst = map
            .get_mut(service_id)
            .ok_or_else(|| SchedulerError::UnknownService(service_id.to_string()))?;
        if inst.state != InstanceState::Reserved {
            return Err(SchedulerError::WrongState {
                id: service_id.to_string(),
                state: inst.state.clone(),
                expected: "reserved",
            });
        }
        self.sdum.start(service_id, &inst.resolved_streams, op)?;
        self.registry.set_service_status(service_id, ServiceStatus::Delivering)?;
        inst.state = InstanceState::Active;
        Ok(inst.clone())
    }

    /// Stops a reserved or active service and releases its reservation.
    pub fn stop(&self, service_id: &Iri) -> Result<ServiceInstance, SchedulerError> {
        let mut map = self.instances.lock().expect("instances poisoned");
        let inst = map
            .get_mut(service_id)
            .ok_or_else(|| SchedulerError::UnknownService(service_id.to_string()))?;
        match inst.state {
            InstanceState::Reserved => {}
            InstanceState::Active => self.sdum.stop(service_id)?,
            _ => {
                return Err(SchedulerError::WrongState {
                    id: service_id.to_string(),
                    state: inst.state.clone(),
                    expected: "reserved or active",
                })
            }
        }
        if let Some(r) = inst.reservation {
            self.release(r);
        }
        self.registry.set_service_status(service_id, ServiceStatus::Stopped)?;
        inst.state = InstanceState::Stopped;
        Ok(inst.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::auth::AuthToken;
    use crate::registry::SensorDescription;
    use crate::sparql::GeoPoint;
    use crate::store::Store;
    use crate::vocab::SSN_SENSOR;
    use proptest::prelude::*;

    const ADMIN: Option<&str> = Some("admin-token");
    const CENTER: (f64, f64) = (6.635227203369141, 46.52119378179781);

    fn setup() -> (Scheduler, Arc<Registry>, Arc<Sdum>) {
        let registry = Arc::new(Registry::new(Arc::new(Store::new())));
        let sdum = Arc::new(Sdum::new(None));
        let auth = Authenticator::new(vec![
            AuthToken::new("admin-token", Role::Admin),
            AuthToken::new("consumer-token", Role::Consumer),
        ]);
        let s = Scheduler::new(NodeId::new("n1").unwrap(), Arc::clone(&registry), Arc::clone(&sdum), auth, None);
        (s, registry, sdum)
    }

    fn seed_sensors(reg: &Registry) {
        // Five sensors near the centre, five far away; one property each.
        for i in 0..10 {
            let offset = if i < 5 { 0.01 * i as f64 } else { 1.0 + i as f64 };
            reg.register_sensor(&SensorDescription {
                id: Iri::new(format!("urn:sensor:{i}")).unwrap(),
                label: format!("sensor {i}"),
                sensor_type: Iri::new("http://demo.org/ns#TestType").unwrap(),
                type_parents: vec![Iri::new(SSN_SENSOR).unwrap()],
                observed_properties: [Iri::new("urn:hierion:property#waitingTime").unwrap()].into(),
                location: Some(GeoPoint::new(CENTER.0, (CENTER.1 + offset).min(89.0)).unwrap()),
                owner_node: NodeId::new("n1").unwrap(),
            })
            .unwrap();
        }
    }

    fn spec_with(query: String) -> OsdSpec {
        let mut s = osdspec::parse_osdspec(include_str!("../tests/fixtures/service_spec.xml")).unwrap();
        s.oamos[0].osmos[0].query_requests = vec![query];
        s
    }

    fn discovery_spec() -> OsdSpec {
        let center = GeoPoint::new(CENTER.0, CENTER.1).unwrap();
        spec_with(Registry::discovery_query(None, &center, 15.0))
    }

    #[test]
    fn resolves_five_streams() {
        let (s, reg, _) = setup();
        seed_sensors(&reg);
        let inst = s.submit_request(&discovery_spec(), ADMIN).unwrap();
        assert_eq!(inst.state, InstanceState::Reserved);
        assert_eq!(inst.resolved_streams.len(), 5);
        assert_eq!(inst.resolved_streams[0].as_str(), "urn:sensor:0/stream/waitingTime");
        assert_eq!(reg.service(&inst.service_id).unwrap().status, ServiceStatus::Scheduled);
    }

    #[test]
    fn nothing_matches_fails_without_side_effects() {
        let (s, reg, _) = setup();
        let inst = s.submit_request(&discovery_spec(), ADMIN).unwrap();
        assert_eq!(inst.state, InstanceState::Failed(NO_CONTRIBUTING_SENSORS.into()));
        assert!(s.reservations().is_empty());
        assert!(reg.store().total() == 0);
        let mut permissive = discovery_spec();
        permissive.oamos[0].osmos[0].query_controls.report_if_empty = true;
        assert_eq!(s.submit_request(&permissive, ADMIN).unwrap().state, InstanceState::Reserved);
    }

    #[test]
    fn auth_is_checked_first() {
        let (s, reg, _) = setup();
        seed_sensors(&reg);
        assert!(matches!(s.submit_request(&discovery_spec(), None), Err(SchedulerError::Auth(AuthError::Missing))));
        assert!(matches!(
            s.submit_request(&discovery_spec(), Some("consumer-token")),
            Err(SchedulerError::Auth(AuthError::Forbidden { .. }))
        ));
        assert!(matches!(s.submit_request(&discovery_spec(), Some("nope")), Err(SchedulerError::Auth(AuthError::Invalid))));
        assert!(s.reservations().is_empty());
    }

    #[test]
    fn parse_error_names_the_osmo() {
        let (s, reg, _) = setup();
        seed_sensors(&reg);
        let mut spec = discovery_spec();
        spec.oamos[0].osmos[0].query_requests.push("SELECT ?s WHERE { ?s }".into());
        match s.submit_request(&spec, ADMIN) {
            Err(SchedulerError::Parse { path, .. }) => assert_eq!(path, "OAMO[0].OSMO[0].queryRequests[1]"),
            other => panic!("{other:?}"),
        }
        assert!(s.reservations().is_empty());
        assert!(reg.discover_services("avg", None).unwrap().is_empty());
    }

    #[test]
    fn schedules_are_unsupported() {
        let (s, reg, _) = setup();
        seed_sensors(&reg);
        let mut spec = discovery_spec();
        spec.oamos[0].osmos[0].query_controls.query_schedule = Some("every 5m".into());
        assert!(matches!(s.submit_request(&spec, ADMIN), Err(SchedulerError::UnsupportedSchedule { .. })));
    }

    #[test]
    fn capacity_and_release() {
        let (s, _, _) = setup();
        let a = Iri::new("urn:st:a").unwrap();
        let b = Iri::new("urn:st:b").unwrap();
        let holder = Iri::new("urn:h").unwrap();
        s.set_capacity(&a, 1);
        let r1 = s.reserve(&holder, &[a.clone(), b.clone()], 1).unwrap();
        match s.reserve(&holder, &[a.clone(), b.clone()], 1) {
            Err(SchedulerError::Capacity(c)) => assert_eq!(c, vec![a.clone()]),
            other => panic!("{other:?}"),
        }
        // All-or-nothing: b was not touched by the failed attempt.
        assert_eq!(s.reserved_units(&b), 1);
        s.release(r1.id);
        s.release(r1.id);
        s.release(ReservationId(999));
        s.reserve(&holder, std::slice::from_ref(&a), 1).unwrap();
    }

    #[test]
    fn capacity_failure_leaves_no_record() {
        let (s, reg, _) = setup();
        seed_sensors(&reg);
        s.set_capacity(&Iri::new("urn:sensor:2/stream/waitingTime").unwrap(), 0);
        assert!(matches!(s.submit_request(&discovery_spec(), ADMIN), Err(SchedulerError::Capacity(_))));
        assert!(s.reservations().is_empty());
        assert_eq!(reg.store().count(&crate::store::GraphId::parse(crate::vocab::SERVICEMETA_GRAPH).unwrap()), 0);
    }

    #[test]
    fn activate_then_stop() {
        let (s, reg, sdum) = setup();
        seed_sensors(&reg);
        let inst = s.submit_request(&discovery_spec(), ADMIN).unwrap();
        let id = inst.service_id.clone();
        assert!(sdum.deliver(&id).is_err());
        s.activate(&id, None).unwrap();
        assert!(matches!(s.activate(&id, None), Err(SchedulerError::WrongState { .. })));
        let sub = sdum.deliver(&id).unwrap();
        sdum.offer(&crate::ingestion::StreamTuple::new(inst.resolved_streams[0].clone(), 1, 4.0));
        assert_eq!(sub.drain().len(), 1);
        s.stop(&id).unwrap();
        assert!(s.reservations().is_empty());
        assert_eq!(reg.service(&id).unwrap().status, ServiceStatus::Stopped);
        assert!(matches!(s.stop(&id), Err(SchedulerError::WrongState { .. })));
    }

    #[derive(Clone, Debug)]
    enum Op {
        Submit(bool),
        Activate(usize),
        Stop(usize),
    }

    fn op() -> impl Strategy<Value = Op> {
        prop_oneof![
            any::<bool>().prop_map(Op::Submit),
            (0usize..8).prop_map(Op::Activate),
            (0usize..8).prop_map(Op::Stop),
        ]
    }

    fn legal(from: &InstanceState, to: &InstanceState) -> bool {
        use InstanceState::*;
        matches!((from, to), (Reserved, Active) | (Reserved, Stopped) | (Active, Stopped))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn only_legal_transitions(ops in prop::collection::vec(op(), 1..25)) {
            let (s, reg, _) = setup();
            seed_sensors(&reg);
            let limited = Iri::new("urn:sensor:0/stream/waitingTime").unwrap();
            s.set_capacity(&limited, 3);
            let mut ids: Vec<Iri> = Vec::new();
            let mut seen: HashMap<Iri, InstanceState> = HashMap::new();
            for op in ops {
                match op {
                    Op::Submit(valid) => {
                        let spec = if valid { discovery_spec() } else { spec_with("SELECT ?x WHERE { ?x <urn:p> <urn:none> }".into()) };
                        if let Ok(inst) = s.submit_request(&spec, ADMIN) {
                            if inst.state == InstanceState::Reserved {
                                ids.push(inst.service_id.clone());
                                seen.insert(inst.service_id.clone(), inst.state);
                            }
                        }
                    }
                    Op::Activate(i) | Op::Stop(i) if ids.is_empty() => { let _ = i; }
                    Op::Activate(i) => { let _ = s.activate(&ids[i % ids.len()], None); }
                    Op::Stop(i) => { let _ = s.stop(&ids[i % ids.len()]); }
                }
                for id in &ids {
                    let now = s.instance(id).unwrap().state;
                    let before = seen.insert(id.clone(), now.clone()).unwrap();
                    prop_assert!(before == now || legal(&before, &now), "{before} -> {now}");
                }
                prop_assert!(s.reserved_units(&limited) <= 3);
                let held = s.reservations().len();
                let live = ids.iter().filter(|id| matches!(s.instance(id).unwrap().state, InstanceState::Reserved | InstanceState::Active)).count();
                prop_assert_eq!(held, live);
            }
        }
    }
}
