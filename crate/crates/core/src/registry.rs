//! Directory service: sensor and service descriptions stored as triples,
//! with location-based sensor discovery and capability-based service lookup.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use serde::Deserialize;

use crate::node::NodeId;
use crate::osdspec::{self, OsdError, OsdSpec};
use crate::sparql::{self, GeoPoint, QueryError};
use crate::store::{GraphId, Iri, Literal, Store, StoreError, Term, Triple};
use crate::vocab::*;

#[derive(Debug, thiserror::Error)]
pub enum RegistryError {
    #[error("`{0}` is already registered")]
    Conflict(String),
    #[error("invalid description: {0}")]
    Validation(String),
    #[error("`{0}` is not registered")]
    NotFound(String),
    #[error("service status cannot move from {from} to {to}")]
    InvalidTransition { from: ServiceStatus, to: ServiceStatus },
    #[error(transparent)]
    Spec(#[from] OsdError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Query(#[from] QueryError),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SensorDescription {
    pub id: Iri,
    pub label: String,
    pub sensor_type: Iri,
    /// Superclass chain of `sensor_type`, nearest first, ending at the SSN sensor class.
    pub type_parents: Vec<Iri>,
    pub observed_properties: BTreeSet<Iri>,
    pub location: Option<GeoPoint>,
    pub owner_node: NodeId,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DescriptionFile {
    id: String,
    label: String,
    sensor_type: String,
    type_parents: Vec<String>,
    observed_properties: Vec<String>,
    location: Option<LocationFile>,
    owner_node: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LocationFile {
    lon: f64,
    lat: f64,
}

impl SensorDescription {
    /// Parses a TOML description file.
    pub fn from_toml(text: &str) -> Result<Self, RegistryError> {
        let raw: DescriptionFile =
            toml::from_str(text).map_err(|e| RegistryError::Validation(e.to_string()))?;
        let iri = |s: &str| Iri::new(s).map_err(RegistryError::from);
        let location = match raw.location {
            Some(l) => Some(
                GeoPoint::new(l.lon, l.lat).map_err(|e| RegistryError::Validation(e.to_string()))?,
            ),
            None => None,
        };
        Ok(SensorDescription {
            id: iri(&raw.id)?,
            label: raw.label,
            sensor_type: iri(&raw.sensor_type)?,
            type_parents: raw.type_parents.iter().map(|s| iri(s)).collect::<Result<_, _>>()?,
            observed_properties: raw
                .observed_properties
                .iter()
                .map(|s| iri(s))
                .collect::<Result<_, _>>()?,
            location,
            owner_node: NodeId::new(&raw.owner_node)
                .map_err(|e| RegistryError::Validation(e.to_string()))?,
        })
    }

    pub fn validate(&self) -> Result<GeoPoint, RegistryError> {
        let invalid = |m: &str| Err(RegistryError::Validation(format!("{}: {m}", self.id)));
        if self.observed_properties.is_empty() {
            return invalid("at least one observed property is required");
        }
        if self.type_parents.last().map(Iri::as_str) != Some(SSN_SENSOR) {
            return invalid("type_parents must end at the SSN sensor class");
        }
        let mut seen = BTreeSet::from([&self.sensor_type]);
        if !self.type_parents.iter().all(|p| seen.insert(p)) {
            return invalid("type_parents contains a cycle");
        }
        match self.location {
            Some(p) => Ok(p),
            None => invalid("location is required"),
        }
    }

    fn location_node(&self) -> Result<Iri, StoreError> {
        Iri::new(format!("{}/location", self.id))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ServiceStatus {
    Registered,
    Scheduled,
    Delivering,
    Stopped,
}

impl ServiceStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            ServiceStatus::Registered => "registered",
            ServiceStatus::Scheduled => "scheduled",
            ServiceStatus::Delivering => "delivering",
            ServiceStatus::Stopped => "stopped",
        }
    }
}

impl fmt::Display for ServiceStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ServiceStatus {
    type Err = RegistryError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "registered" => ServiceStatus::Registered,
            "scheduled" => ServiceStatus::Scheduled,
            "delivering" => ServiceStatus::Delivering,
            "stopped" => ServiceStatus::Stopped,
            other => return Err(RegistryError::Validation(format!("unknown status `{other}`"))),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ServiceRecord {
    pub id: Iri,
    pub spec: OsdSpec,
    pub capabilities: BTreeSet<String>,
    pub status: ServiceStatus,
    pub node: NodeId,
}

fn check_capability(tag: &str) -> Result<(), RegistryError> {
    if tag.is_empty() || tag.chars().any(|c| c.is_whitespace() || c.is_control()) {
        return Err(RegistryError::Validation(format!("bad capability tag `{tag}`")));
    }
    Ok(())
}

fn c(iri: &str) -> Iri {
    Iri::new(iri).expect("vocabulary constant")
}

fn double(v: f64) -> Term {
    Term::typed_literal(v.to_string(), c(XSD_DOUBLE))
}

/// Registry view over a shared [`Store`].
pub struct Registry {
    store: Arc<Store>,
    sensormeta: GraphId,
    servicemeta: GraphId,
    // Check-then-insert sequences must not interleave.
    write_lock: Mutex<()>,
    next_service: AtomicU64,
}

impl Registry {
    pub fn new(store: Arc<Store>) -> Self {
        Registry {
            store,
            sensormeta: GraphId::parse(SENSORMETA_GRAPH).expect("constant"),
            servicemeta: GraphId::parse(SERVICEMETA_GRAPH).expect("constant"),
            write_lock: Mutex::new(()),
            next_service: AtomicU64::new(0),
        }
    }

    pub fn store(&self) -> &Arc<Store> {
        &self.store
    }

    pub fn register_sensor(&self, desc: &SensorDescription) -> Result<Iri, RegistryError> {
        let point = desc.validate()?;
        let _guard = self.write_lock.lock().expect("registry lock poisoned");
        let id = Term::Iri(desc.id.clone());
        let rdf_type = c(RDF_TYPE);
        let subclass = c(RDFS_SUBCLASS_OF);
        if !self.store.find(&self.sensormeta, Some(&id), Some(&rdf_type), None).is_empty() {
            return Err(RegistryError::Conflict(desc.id.to_string()));
        }

        let mut triples = vec![Triple::new(id.clone(), rdf_type, Term::Iri(desc.sensor_type.clone()))?];
        let mut child = &desc.sensor_type;
        for parent in &desc.type_parents {
            let child_term = Term::Iri(child.clone());
            let existing = self.store.find(&self.sensormeta, Some(&child_term), Some(&subclass), None);
            if let Some(other) = existing.iter().find(|t| t.object != Term::Iri(parent.clone())) {
                return Err(RegistryError::Conflict(format!(
                    "{child} is already a subclass of {}, not {parent}",
                    other.object
                )));
            }
            triples.push(Triple::new(child_term, subclass.clone(), Term::Iri(parent.clone()))?);
            child = parent;
        }

        let loc = Term::Iri(desc.location_node()?);
        triples.push(Triple::new(id.clone(), c(RDFS_LABEL), Term::literal(&desc.label))?);
        for prop in &desc.observed_properties {
            triples.push(Triple::new(id.clone(), c(SSN_OBSERVES), Term::Iri(prop.clone()))?);
        }
        triples.push(Triple::new(
            id.clone(),
            c(HIERION_OWNER_NODE),
            Term::literal(desc.owner_node.as_str()),
        )?);
        triples.push(Triple::new(id, c(DUL_HAS_LOCATION), loc.clone())?);
        triples.push(Triple::new(
            loc.clone(),
            c(GEO_GEOMETRY),
            Term::typed_literal(point.to_wkt(), c(VIRTRDF_GEOMETRY)),
        )?);
        triples.push(Triple::new(loc.clone(), c(GEO_LAT), double(point.lat()))?);
        triples.push(Triple::new(loc, c(GEO_LONG), double(point.lon()))?);
        self.store.insert(&self.sensormeta, &triples)?;
        Ok(desc.id.clone())
    }

    /// Rebuilds a description from the stored triples.
    pub fn describe_sensor(&self, id: &Iri) -> Result<SensorDescription, RegistryError> {
        let g = &self.sensormeta;
        let subject = Term::Iri(id.clone());
        let objects = |s: &Term, p: &str| -> Vec<Term> {
            self.store
                .find(g, Some(s), Some(&c(p)), None)
                .into_iter()
                .map(|t| t.object)
                .collect()
        };
        let missing = || RegistryError::NotFound(id.to_string());
        let one_iri = |s: &Term, p: &str| -> Result<Iri, RegistryError> {
            objects(s, p)
                .into_iter()
                .find_map(|o| o.as_iri().cloned())
                .ok_or_else(missing)
        };
        let lexical = |s: &Term, p: &str| -> Option<String> {
            objects(s, p)
                .into_iter()
                .find_map(|o| o.as_literal().map(|l| l.lexical().to_string()))
        };

        let sensor_type = one_iri(&subject, RDF_TYPE)?;
        let mut type_parents = Vec::new();
        let mut cur = sensor_type.clone();
        while cur.as_str() != SSN_SENSOR {
            let parent = one_iri(&Term::Iri(cur), RDFS_SUBCLASS_OF).map_err(|_| {
                RegistryError::Validation(format!("{id}: broken subclass chain"))
            })?;
            if type_parents.contains(&parent) {
                return Err(RegistryError::Validation(format!("{id}: cyclic subclass chain")));
            }
            type_parents.push(parent.clone());
            cur = parent;
        }
        let loc = Term::Iri(one_iri(&subject, DUL_HAS_LOCATION)?);
        let coord = |p: &str| lexical(&loc, p).and_then(|v| v.parse::<f64>().ok());
        let location = match (coord(GEO_LONG), coord(GEO_LAT)) {
            (Some(lon), Some(lat)) => GeoPoint::new(lon, lat).ok(),
            _ => None,
        };
        let owner = lexical(&subject, HIERION_OWNER_NODE).ok_or_else(missing)?;
        Ok(SensorDescription {
            id: id.clone(),
            label: lexical(&subject, RDFS_LABEL).unwrap_or_default(),
            sensor_type,
            type_parents,
            observed_properties: objects(&subject, SSN_OBSERVES)
                .into_iter()
                .filter_map(|o| o.as_iri().cloned())
                .collect(),
            location,
            owner_node: NodeId::new(&owner).map_err(|e| RegistryError::Validation(e.to_string()))?,
        })
    }

    /// Every registered sensor IRI, sorted.
    pub fn sensors(&self) -> Vec<Iri> {
        // Sensors are exactly the subjects carrying a location.
        let mut out: Vec<Iri> = self
            .store
            .find(&self.sensormeta, None, Some(&c(DUL_HAS_LOCATION)), None)
            .into_iter()
            .filter_map(|t| t.subject.as_iri().cloned())
            .collect();
        out.sort();
        out.dedup();
        out
    }

    /// The discovery query for sensors of `type_filter` (any type when
    /// `None`) within `radius_km` of `center`.
    pub fn discovery_query(type_filter: Option<&Iri>, center: &GeoPoint, radius_km: f64) -> String {
        let type_patterns = match type_filter {
            Some(t) => format!(
                "?sensorId <{RDF_TYPE}> <{t}> .\n<{t}> <{RDFS_SUBCLASS_OF}> ?parent ."
            ),
            None => format!("?sensorId <{RDF_TYPE}> ?type .\n?type <{RDFS_SUBCLASS_OF}> ?parent ."),
        };
        format!(
            "SELECT ?sensorId\nFROM <{SENSORMETA_GRAPH}>\nWHERE\n{{\n{type_patterns}\n\
             ?sensorId <{DUL_HAS_LOCATION}> ?loc .\n\
             ?loc geo:geometry ?geo .\n\
             ?loc geo:lat ?lat .\n\
             ?loc geo:long ?lon .\n\
             FILTER (<bif:st_intersects>(?geo, <bif:st_point>({}, {}), {radius_km})) .\n}}\n",
            center.lon(),
            center.lat(),
        )
    }

    pub fn discover_sensors(
        &self,
        type_filter: Option<&Iri>,
        center: &GeoPoint,
        radius_km: f64,
    ) -> Result<Vec<Iri>, RegistryError> {
        if !radius_km.is_finite() || radius_km < 0.0 {
            return Err(RegistryError::Validation(format!("radius {radius_km} must be a finite number >= 0")));
        }
        let text = Self::discovery_query(type_filter, center, radius_km);
        let rows = sparql::run(&text, &self.store)?;
        let mut ids: Vec<Iri> = rows
            .column("sensorId")
            .into_iter()
            .filter_map(|t| t.as_iri().cloned())
            .collect();
        ids.sort();
        ids.dedup();
        Ok(ids)
    }

    pub fn register_service(
        &self,
        spec: &OsdSpec,
        capabilities: &[&str],
        node: &NodeId,
    ) -> Result<Iri, RegistryError> {
        let diags = osdspec::validate(spec);
        if !diags.is_empty() {
            return Err(OsdError::Validation(diags).into());
        }
        for tag in capabilities {
            check_capability(tag)?;
        }
        let _guard = self.write_lock.lock().expect("registry lock poisoned");
        let id = loop {
            let n = self.next_service.fetch_add(1, Ordering::Relaxed);
            let id = Iri::new(format!("urn:hierion:service:{node}:{n}"))?;
            let subject = Term::Iri(id.clone());
            if self.store.find(&self.servicemeta, Some(&subject), None, None).is_empty() {
                break id;
            }
        };
        let s = Term::Iri(id.clone());
        let mut triples = vec![
            Triple::new(s.clone(), c(RDF_TYPE), Term::Iri(c(HIERION_SERVICE)))?,
            Triple::new(s.clone(), c(HIERION_HOSTED_BY), Term::literal(node.as_str()))?,
            Triple::new(s.clone(), c(HIERION_STATUS), Term::literal(ServiceStatus::Registered.as_str()))?,
            Triple::new(s.clone(), c(HIERION_SPEC), Term::literal(osdspec::serialize_osdspec(spec)))?,
        ];
        for tag in capabilities {
            triples.push(Triple::new(s.clone(), c(HIERION_CAPABILITY), Term::literal(tag))?);
        }
        self.store.insert(&self.servicemeta, &triples)?;
        Ok(id)
    }

    pub fn service(&self, id: &Iri) -> Result<ServiceRecord, RegistryError> {
        let s = Term::Iri(id.clone());
        let triples = self.store.find(&self.servicemeta, Some(&s), None, None);
        if triples.is_empty() {
            return Err(RegistryError::NotFound(id.to_string()));
        }
        let text = |p: &str| -> Vec<String> {
            triples
                .iter()
                .filter(|t| t.predicate.as_str() == p)
                .filter_map(|t| t.object.as_literal().map(Literal::lexical))
                .map(str::to_string)
                .collect()
        };
        let first = |p: &str| {
            text(p)
                .into_iter()
                .next()
                .ok_or_else(|| RegistryError::Validation(format!("{id}: missing {p}")))
        };
        Ok(ServiceRecord {
            id: id.clone(),
            spec: osdspec::parse_osdspec(&first(HIERION_SPEC)?)?,
            capabilities: text(HIERION_CAPABILITY).into_iter().collect(),
            status: first(HIERION_STATUS)?.parse()?,
            node: NodeId::new(&first(HIERION_HOSTED_BY)?)
                .map_err(|e| RegistryError::Validation(e.to_string()))?,
        })
    }

    /// Moves a service forward in its lifecycle. Skipping states is allowed,
    /// going backwards or staying put is not.
    pub fn set_service_status(&self, id: &Iri, status: ServiceStatus) -> Result<(), RegistryError> {
        let _guard = self.write_lock.lock().expect("registry lock poisoned");
        let current = self.service(id)?.status;
        if status <= current {
            return Err(RegistryError::InvalidTransition { from: current, to: status });
        }
        let s = Term::Iri(id.clone());
        let p = c(HIERION_STATUS);
        self.store
            .remove(&self.servicemeta, &[Triple::new(s.clone(), p.clone(), Term::literal(current.as_str()))?]);
        self.store
            .insert(&self.servicemeta, &[Triple::new(s, p, Term::literal(status.as_str()))?])?;
        Ok(())
    }

    /// Services advertising `capability`, optionally only those hosted by `node`.
    pub fn discover_services(
        &self,
        capability: &str,
        node: Option<&NodeId>,
    ) -> Result<Vec<ServiceRecord>, RegistryError> {
        let hits = self.store.find(
            &self.servicemeta,
            None,
            Some(&c(HIERION_CAPABILITY)),
            Some(&Term::literal(capability)),
        );
        let mut out = Vec::new();
        for t in hits {
            let Some(id) = t.subject.as_iri() else { continue };
            let record = self.service(id)?;
            if node.is_none_or(|n| *n == record.node) {
                out.push(record);
            }
        }
        out.sort_by(|a, b| a.id.cmp(&b.id));
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparql::haversine_km;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const TEST_TYPE: &str = "http://demo.org/ns#TestType";
    const TEMPERATURE: &str = "http://demo.org/ns#temperature";
    const HUMIDITY: &str = "http://demo.org/ns#humidity";

    fn center() -> GeoPoint {
        GeoPoint::new(6.635227203369141, 46.52119378179781).unwrap()
    }

    fn sensor(id: &str, at: GeoPoint) -> SensorDescription {
        SensorDescription {
            id: Iri::new(id).unwrap(),
            label: "Vaisala Weather Station".into(),
            sensor_type: c(TEST_TYPE),
            type_parents: vec![c(SSN_SENSOR)],
            observed_properties: [c(TEMPERATURE), c(HUMIDITY)].into(),
            location: Some(at),
            owner_node: NodeId::new("local").unwrap(),
        }
    }

    fn registry() -> Registry {
        Registry::new(Arc::new(Store::new()))
    }

    #[test]
    fn fixture_query_finds_station() {
        let reg = registry();
        reg.register_sensor(&sensor("http://demo.org/sensor/vaisala", center())).unwrap();
        let rows = sparql::run(include_str!("../tests/fixtures/device_discovery.rq"), reg.store()).unwrap();
        let ids: Vec<String> = rows
            .column("graphNode_2197552479500_sensorId")
            .iter()
            .map(|t| t.as_iri().unwrap().to_string())
            .collect();
        assert_eq!(ids, vec!["http://demo.org/sensor/vaisala"]);
    }

    #[test]
    fn duplicate_is_conflict() {
        let reg = registry();
        let d = sensor("urn:s:1", center());
        reg.register_sensor(&d).unwrap();
        assert!(matches!(reg.register_sensor(&d), Err(RegistryError::Conflict(_))));
    }

    #[test]
    fn validation_errors() {
        let reg = registry();
        let mut d = sensor("urn:s:1", center());
        d.location = None;
        assert!(matches!(reg.register_sensor(&d), Err(RegistryError::Validation(_))));
        let mut d = sensor("urn:s:1", center());
        d.observed_properties.clear();
        assert!(matches!(reg.register_sensor(&d), Err(RegistryError::Validation(_))));
        let mut d = sensor("urn:s:1", center());
        d.type_parents = vec![c("urn:t:Other")];
        assert!(matches!(reg.register_sensor(&d), Err(RegistryError::Validation(_))));
        assert!(reg.store().total() == 0);
    }

    #[test]
    fn inconsistent_parent_is_conflict() {
        let reg = registry();
        let mut a = sensor("urn:s:a", center());
        a.type_parents = vec![c("urn:t:Weather"), c(SSN_SENSOR)];
        reg.register_sensor(&a).unwrap();
        let mut b = sensor("urn:s:b", center());
        b.type_parents = vec![c("urn:t:Air"), c(SSN_SENSOR)];
        assert!(matches!(reg.register_sensor(&b), Err(RegistryError::Conflict(_))));
    }

    #[test]
    fn describe_round_trip() {
        let reg = registry();
        let mut d = sensor("urn:s:a", GeoPoint::new(-0.1275, 51.507222).unwrap());
        d.type_parents = vec![c("urn:t:Weather"), c("urn:t:Env"), c(SSN_SENSOR)];
        reg.register_sensor(&d).unwrap();
        assert_eq!(reg.describe_sensor(&d.id).unwrap(), d);
        assert!(matches!(
            reg.describe_sensor(&c("urn:s:none")),
            Err(RegistryError::NotFound(_))
        ));
    }

    #[test]
    fn radius_zero_and_unknown_type() {
        let reg = registry();
        let here = GeoPoint::new(2.35, 48.85).unwrap();
        reg.register_sensor(&sensor("urn:s:here", here)).unwrap();
        reg.register_sensor(&sensor("urn:s:near", GeoPoint::new(2.351, 48.85).unwrap())).unwrap();
        assert_eq!(reg.discover_sensors(None, &here, 0.0).unwrap(), vec![c("urn:s:here")]);
        assert!(reg.discover_sensors(Some(&c("urn:t:Nothing")), &here, 100.0).unwrap().is_empty());
        assert_eq!(reg.discover_sensors(Some(&c(TEST_TYPE)), &here, 1.0).unwrap().len(), 2);
        assert!(reg.discover_sensors(None, &here, -1.0).is_err());
    }

    #[test]
    fn far_sensor_is_excluded() {
        let reg = registry();
        // 0.2 degrees of latitude is about 22 km.
        let far = GeoPoint::new(center().lon(), center().lat() + 0.2).unwrap();
        assert!(haversine_km(&far, &center()) > 15.0);
        reg.register_sensor(&sensor("urn:s:far", far)).unwrap();
        reg.register_sensor(&sensor("urn:s:in", center())).unwrap();
        assert_eq!(
            reg.discover_sensors(Some(&c(TEST_TYPE)), &center(), 15.0).unwrap(),
            vec![c("urn:s:in")]
        );
    }

    /// Chord length on the unit sphere, converted to a great-circle distance.
    fn oracle_km(a: &GeoPoint, b: &GeoPoint) -> f64 {
        let v = |p: &GeoPoint| {
            let (la, lo) = (p.lat().to_radians(), p.lon().to_radians());
            [la.cos() * lo.cos(), la.cos() * lo.sin(), la.sin()]
        };
        let (x, y) = (v(a), v(b));
        let chord = ((x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2) + (x[2] - y[2]).powi(2)).sqrt();
        2.0 * crate::sparql::EARTH_RADIUS_KM * (chord / 2.0).asin()
    }

    #[test]
    fn twenty_seeded_sensors_five_inside() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let reg = registry();
        let mut inside = Vec::new();
        for i in 0..20 {
            // Five points within ~10 km, the rest 30..200 km away.
            let (dlat, dlon) = if i % 4 == 0 {
                (rng.random_range(-0.06..0.06), rng.random_range(-0.08..0.08))
            } else {
                let r: f64 = rng.random_range(0.3..1.8);
                let a: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                (r * a.sin(), r * a.cos())
            };
            let p = GeoPoint::new(center().lon() + dlon, center().lat() + dlat).unwrap();
            let id = format!("urn:s:{i:02}");
            reg.register_sensor(&sensor(&id, p)).unwrap();
            if oracle_km(&p, &center()) <= 15.0 {
                inside.push(c(&id));
            }
        }
        assert_eq!(inside.len(), 5);
        assert_eq!(reg.discover_sensors(None, &center(), 15.0).unwrap(), inside);
    }

    #[test]
    fn description_file() {
        let text = r#"
id = "http://demo.org/sensor/vaisala"
label = "Vaisala Weather Station"
sensor_type = "http://demo.org/ns#TestType"
type_parents = ["http://purl.oclc.org/NET/ssnx/ssn#Sensor"]
observed_properties = ["http://demo.org/ns#temperature", "http://demo.org/ns#humidity"]
owner_node = "local"

[location]
lon = 6.635227203369141
lat = 46.52119378179781
"#;
        let d = SensorDescription::from_toml(text).unwrap();
        assert_eq!(d, sensor("http://demo.org/sensor/vaisala", center()));
        let no_loc = text.split("[location]").next().unwrap();
        let d = SensorDescription::from_toml(no_loc).unwrap();
        assert!(d.validate().is_err());
        assert!(SensorDescription::from_toml("id = 3").is_err());
    }

    fn spec() -> OsdSpec {
        OsdSpec::single("svc", vec!["SELECT ?s WHERE { ?s ?p ?o }".into()])
    }

    #[test]
    fn services_by_capability() {
        let reg = registry();
        let node = NodeId::new("n1").unwrap();
        let id = reg.register_service(&spec(), &["avg"], &node).unwrap();
        let found = reg.discover_services("avg", None).unwrap();
        assert_eq!(found.len(), 1);
        assert_eq!(found[0].id, id);
        assert_eq!(found[0].spec, spec());
        assert_eq!(found[0].status, ServiceStatus::Registered);
        assert!(reg.discover_services("count", None).unwrap().is_empty());
        assert!(reg
            .discover_services("avg", Some(&NodeId::new("n2").unwrap()))
            .unwrap()
            .is_empty());
    }

    #[test]
    fn invalid_service_spec() {
        let reg = registry();
        let mut bad = spec();
        bad.oamos[0].osmos[0].query_requests.clear();
        let node = NodeId::new("n1").unwrap();
        assert!(matches!(
            reg.register_service(&bad, &["avg"], &node),
            Err(RegistryError::Spec(OsdError::Validation(_)))
        ));
        assert!(reg.register_service(&spec(), &["two words"], &node).is_err());
    }

    #[test]
    fn status_moves_forward_only() {
        let reg = registry();
        let id = reg.register_service(&spec(), &["avg"], &NodeId::new("n1").unwrap()).unwrap();
        reg.set_service_status(&id, ServiceStatus::Scheduled).unwrap();
        assert!(matches!(
            reg.set_service_status(&id, ServiceStatus::Registered),
            Err(RegistryError::InvalidTransition { .. })
        ));
        reg.set_service_status(&id, ServiceStatus::Stopped).unwrap();
        assert_eq!(reg.service(&id).unwrap().status, ServiceStatus::Stopped);
        assert!(reg.set_service_status(&id, ServiceStatus::Stopped).is_err());
    }
}
