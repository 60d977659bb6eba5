//! Vocabulary IRIs used by the registry and discovery queries.

pub const RDF_TYPE: &str = "http://www.w3.org/1999/02/22-rdf-syntax-ns#type";
pub const RDFS_SUBCLASS_OF: &str = "http://www.w3.org/2000/01/rdf-schema#subClassOf";
pub const RDFS_LABEL: &str = "http://www.w3.org/2000/01/rdf-schema#label";

pub const SSN_SENSOR: &str = "http://purl.oclc.org/NET/ssnx/ssn#Sensor";
pub const SSN_OBSERVES: &str = "http://purl.oclc.org/NET/ssnx/ssn#observes";
pub const SSN_OBSERVED_BY: &str = "http://purl.oclc.org/NET/ssnx/ssn#observedBy";
pub const SSN_OBSERVED_PROPERTY: &str = "http://purl.oclc.org/NET/ssnx/ssn#observedProperty";
pub const SSN_OBSERVATION_RESULT: &str = "http://purl.oclc.org/NET/ssnx/ssn#observationResult";

pub const DUL_HAS_LOCATION: &str = "http://www.loa-cnr.it/ontologies/DUL.owl#hasLocation";

pub const GEO_NS: &str = "http://www.w3.org/2003/01/geo/wgs84_pos#";
pub const GEO_GEOMETRY: &str = "http://www.w3.org/2003/01/geo/wgs84_pos#geometry";
pub const GEO_LAT: &str = "http://www.w3.org/2003/01/geo/wgs84_pos#lat";
pub const GEO_LONG: &str = "http://www.w3.org/2003/01/geo/wgs84_pos#long";

/// Virtuoso built-in function namespace; `bif:st_point` is itself the IRI.
pub const BIF_NS: &str = "bif:";
pub const VIRTRDF_GEOMETRY: &str = "http://www.openlinksw.com/schemas/virtrdf#Geometry";

pub const XSD_DOUBLE: &str = "http://www.w3.org/2001/XMLSchema#double";
pub const XSD_DECIMAL: &str = "http://www.w3.org/2001/XMLSchema#decimal";
pub const XSD_INTEGER: &str = "http://www.w3.org/2001/XMLSchema#integer";
pub const XSD_FLOAT: &str = "http://www.w3.org/2001/XMLSchema#float";
pub const XSD_INT: &str = "http://www.w3.org/2001/XMLSchema#int";
pub const XSD_LONG: &str = "http://www.w3.org/2001/XMLSchema#long";

/// Graph holding sensor metadata, as addressed by discovery queries.
pub const SENSORMETA_GRAPH: &str = "http://openiot.eu/OpenIoT/sensormeta#";
/// Graph holding service records.
pub const SERVICEMETA_GRAPH: &str = "http://openiot.eu/OpenIoT/servicemeta#";
/// Per-node observation graphs are `OBSERVATION_GRAPH_PREFIX` + node id.
pub const OBSERVATION_GRAPH_PREFIX: &str = "urn:hierion:observations:";

pub const HIERION_NS: &str = "urn:hierion:vocab#";
pub const HIERION_SERVICE: &str = "urn:hierion:vocab#Service";
pub const HIERION_CAPABILITY: &str = "urn:hierion:vocab#capability";
pub const HIERION_HOSTED_BY: &str = "urn:hierion:vocab#hostedBy";
pub const HIERION_STATUS: &str = "urn:hierion:vocab#status";
pub const HIERION_SPEC: &str = "urn:hierion:vocab#osdSpec";
pub const HIERION_OWNER_NODE: &str = "urn:hierion:vocab#ownerNode";
pub const HIERION_TIMED_VALUE: &str = "urn:hierion:vocab#TimedValue";

/// Observed properties of the built-in virtual sensors live here.
pub const PROPERTY_NS: &str = "urn:hierion:property#";

pub fn is_numeric_datatype(iri: &str) -> bool {
    matches!(
        iri,
        XSD_DOUBLE | XSD_DECIMAL | XSD_INTEGER | XSD_FLOAT | XSD_INT | XSD_LONG
    )
}
