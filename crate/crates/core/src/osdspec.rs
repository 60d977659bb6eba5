//! Service description documents: an `OSDSpec` holds OAMO containers, each
//! holding OSMO service units with query controls, presentation widgets and
//! one or more query requests.
//!
//! Parsing is two-phase: the XML is read into the data model (well-formedness
//! errors carry a line/column), then the model is validated and every
//! violation is reported at once.

use std::fmt::{self, Write as _};

use quick_xml::events::{BytesStart, Event};
use quick_xml::Reader;

use crate::store::Iri;

pub const NS_OSD: &str = "http://www.openiot.eu/osdspec";
pub const NS_ST: &str = "http://www.w3.org/2007/SPARQL/protocol-types#";
pub const NS_VBR: &str = "http://www.w3.org/2007/SPARQL/results#";
pub const NS_RDF: &str = "http://www.w3.org/1999/02/22-rdf-syntax-ns#";
pub const NS_XSI: &str = "http://www.w3.org/2001/XMLSchema-instance";

/// Accepted namespace prefixes, in the order they are written out.
const NAMESPACES: [(&str, &str); 5] = [
    ("st", NS_ST),
    ("vbr", NS_VBR),
    ("rdf", NS_RDF),
    ("osd", NS_OSD),
    ("xsi", NS_XSI),
];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OsdSpec {
    pub oamos: Vec<Oamo>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Oamo {
    pub name: String,
    pub osmos: Vec<Osmo>,
}

#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct QueryControls {
    /// Opaque schedule text; empty means "run continuously".
    pub query_schedule: Option<String>,
    pub report_if_empty: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Osmo {
    pub name: String,
    pub query_controls: QueryControls,
    pub request_presentation: Vec<Widget>,
    pub query_requests: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Widget {
    pub widget_id: String,
    pub attributes: Vec<(String, String)>,
}

/// A validation finding, located by a path such as `OAMO[0].OSMO[1].queryRequests`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Diagnostic {
    pub path: String,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum OsdError {
    #[error("malformed XML at {line}:{col}: {message}")]
    Xml { line: usize, col: usize, message: String },
    #[error("invalid service description: {}", .0.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("; "))]
    Validation(Vec<Diagnostic>),
}

impl OsdSpec {
    /// Every OSMO with its (OAMO, OSMO) index pair.
    pub fn osmos(&self) -> impl Iterator<Item = (usize, usize, &Osmo)> {
        self.oamos
            .iter()
            .enumerate()
            .flat_map(|(i, a)| a.osmos.iter().enumerate().map(move |(j, o)| (i, j, o)))
    }

    /// A minimal one-OAMO, one-OSMO spec carrying the given queries.
    pub fn single(name: &str, queries: Vec<String>) -> Self {
        OsdSpec {
            oamos: vec![Oamo {
                name: name.to_string(),
                osmos: vec![Osmo {
                    name: format!("{name}-osmo"),
                    query_controls: QueryControls::default(),
                    request_presentation: Vec::new(),
                    query_requests: queries,
                }],
            }],
        }
    }
}

/// Checks every structural invariant. Empty iff the spec is valid.
pub fn validate(spec: &OsdSpec) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let mut push = |path: String, message: &str| {
        out.push(Diagnostic {
            path,
            message: message.to_string(),
        })
    };
    if spec.oamos.is_empty() {
        push("OSDSpec".into(), "at least one OAMO is required");
    }
    for (i, oamo) in spec.oamos.iter().enumerate() {
        if oamo.name.trim().is_empty() {
            push(format!("OAMO[{i}].name"), "name must not be empty");
        }
        if oamo.osmos.is_empty() {
            push(format!("OAMO[{i}].OSMO"), "at least one OSMO is required");
        }
        for (j, osmo) in oamo.osmos.iter().enumerate() {
            let base = format!("OAMO[{i}].OSMO[{j}]");
            if osmo.name.trim().is_empty() {
                push(format!("{base}.name"), "name must not be empty");
            }
            if osmo.query_requests.is_empty() {
                push(format!("{base}.queryRequests"), "at least one query request is required");
            }
            for (k, q) in osmo.query_requests.iter().enumerate() {
                if q.trim().is_empty() {
                    push(format!("{base}.queryRequests[{k}]"), "query text must not be empty");
                }
            }
            for (k, w) in osmo.request_presentation.iter().enumerate() {
                if Iri::new(&w.widget_id).is_err() {
                    push(format!("{base}.requestPresentation[{k}].widgetID"), "widgetID must be a valid IRI");
                }
            }
        }
    }
    out
}

/// Parses and validates a service description document.
pub fn parse_osdspec(xml: &str) -> Result<OsdSpec, OsdError> {
    let mut diags = Vec::new();
    let spec = Builder::new(xml).run(&mut diags)?;
    diags.extend(validate(&spec));
    if diags.is_empty() {
        Ok(spec)
    } else {
        Err(OsdError::Validation(diags))
    }
}

/// Parses raw bytes; invalid UTF-8 is reported as an XML error.
pub fn parse_osdspec_bytes(bytes: &[u8]) -> Result<OsdSpec, OsdError> {
    match std::str::from_utf8(bytes) {
        Ok(text) => parse_osdspec(text),
        Err(e) => {
            let (line, col) = line_col(bytes, e.valid_up_to());
            Err(OsdError::Xml {
                line,
                col,
                message: "input is not valid UTF-8".into(),
            })
        }
    }
}

fn line_col(bytes: &[u8], offset: usize) -> (usize, usize) {
    let upto = &bytes[..offset.min(bytes.len())];
    let line = upto.iter().filter(|b| **b == b'\n').count() + 1;
    let col = upto.iter().rev().take_while(|b| **b != b'\n').count() + 1;
    (line, col)
}

/// Element the builder is currently inside.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Ctx {
    Root,
    Spec,
    Oamo,
    Osmo,
    Controls,
    Schedule,
    ReportIfEmpty,
    Presentation,
    Widget,
    QueryRequest,
    Query,
    Ignored,
}

struct Builder<'a> {
    xml: &'a str,
    reader: Reader<&'a [u8]>,
    stack: Vec<Ctx>,
    text: String,
    spec: OsdSpec,
    seen_root: bool,
}

impl<'a> Builder<'a> {
    fn new(xml: &'a str) -> Self {
        let mut reader = Reader::from_str(xml);
        let cfg = reader.config_mut();
        cfg.expand_empty_elements = true;
        cfg.check_end_names = true;
        Builder {
            xml,
            reader,
            stack: vec![Ctx::Root],
            text: String::new(),
            spec: OsdSpec { oamos: Vec::new() },
            seen_root: false,
        }
    }

    fn err_at(&self, pos: u64, message: impl Into<String>) -> OsdError {
        let (line, col) = line_col(self.xml.as_bytes(), pos as usize);
        OsdError::Xml {
            line,
            col,
            message: message.into(),
        }
    }

    fn here(&self, message: impl Into<String>) -> OsdError {
        self.err_at(self.reader.buffer_position(), message)
    }

    fn run(mut self, diags: &mut Vec<Diagnostic>) -> Result<OsdSpec, OsdError> {
        loop {
            let event = match self.reader.read_event() {
                Ok(ev) => ev,
                Err(e) => return Err(self.err_at(self.reader.error_position(), e.to_string())),
            };
            match event {
                Event::Start(e) => self.open(&e, diags)?,
                Event::End(_) => self.close(diags)?,
                Event::Text(t) => {
                    let raw = t
                        .xml_content()
                        .map_err(|e| self.here(format!("bad text encoding: {e}")))?;
                    self.text_content(&raw)?;
                }
                Event::CData(c) => {
                    let raw = c.decode().map_err(|e| self.here(format!("bad CDATA: {e}")))?;
                    self.text_content(&raw)?;
                }
                Event::GeneralRef(r) => {
                    let resolved = match r.resolve_char_ref() {
                        Ok(Some(ch)) => ch.to_string(),
                        Ok(None) => {
                            let name = r.decode().map_err(|e| self.here(e.to_string()))?;
                            quick_xml::escape::resolve_xml_entity(&name)
                                .ok_or_else(|| self.here(format!("unknown entity `&{name};`")))?
                                .to_string()
                        }
                        Err(e) => return Err(self.here(e.to_string())),
                    };
                    self.text_content(&resolved)?;
                }
                Event::Empty(_) => unreachable!("empty elements are expanded"),
                Event::Decl(_) | Event::Comment(_) | Event::PI(_) => {}
                Event::DocType(_) => return Err(self.here("DOCTYPE is not allowed")),
                Event::Eof => break,
            }
        }
        if self.stack.len() != 1 {
            return Err(self.here("unexpected end of document"));
        }
        if !self.seen_root {
            return Err(self.here("missing OSDSpec root element"));
        }
        Ok(self.spec)
    }

    fn top(&self) -> Ctx {
        *self.stack.last().expect("context stack never empty")
    }

    fn text_content(&mut self, raw: &str) -> Result<(), OsdError> {
        match self.top() {
            Ctx::Schedule | Ctx::ReportIfEmpty | Ctx::Query => {
                self.text.push_str(raw);
                Ok(())
            }
            Ctx::Ignored => Ok(()),
            _ if raw.trim().is_empty() => Ok(()),
            ctx => Err(self.here(format!("unexpected text inside {ctx:?}"))),
        }
    }

    fn open(&mut self, e: &BytesStart<'_>, diags: &mut Vec<Diagnostic>) -> Result<(), OsdError> {
        let qname = String::from_utf8_lossy(e.name().as_ref()).into_owned();
        let attrs = self.attributes(e)?;
        let (prefix, local) = match qname.split_once(':') {
            Some((p, l)) => (Some(p), l),
            None => (None, qname.as_str()),
        };
        if let Some(p) = prefix {
            if p != "xmlns" && !NAMESPACES.iter().any(|(k, _)| *k == p) {
                return Err(self.here(format!("unknown namespace prefix `{p}`")));
            }
        }
        let attr = |name: &str| attrs.iter().find(|(k, _)| k == name).map(|(_, v)| v.clone());
        let next = match (self.top(), prefix, local) {
            (Ctx::Root, Some("osd"), "OSDSpec") => {
                if self.seen_root {
                    return Err(self.here("multiple root elements"));
                }
                self.seen_root = true;
                self.check_namespaces(&attrs)?;
                Ctx::Spec
            }
            (Ctx::Spec, Some("osd"), "OAMO") => {
                self.spec.oamos.push(Oamo {
                    name: attr("name").unwrap_or_default(),
                    osmos: Vec::new(),
                });
                Ctx::Oamo
            }
            (Ctx::Oamo, Some("osd"), "OSMO") => {
                let osmo = Osmo {
                    name: attr("name").unwrap_or_default(),
                    query_controls: QueryControls::default(),
                    request_presentation: Vec::new(),
                    query_requests: Vec::new(),
                };
                self.oamo().osmos.push(osmo);
                Ctx::Osmo
            }
            (Ctx::Osmo, Some("osd"), "queryControls") => Ctx::Controls,
            (Ctx::Controls, Some("osd"), "QuerySchedule") => {
                self.text.clear();
                Ctx::Schedule
            }
            (Ctx::Controls, Some("osd"), "reportIfEmpty") => {
                self.text.clear();
                Ctx::ReportIfEmpty
            }
            (Ctx::Osmo, Some("osd"), "requestPresentation") => Ctx::Presentation,
            (Ctx::Presentation, Some("osd"), "widget") => {
                let widget = Widget {
                    widget_id: attr("widgetID").unwrap_or_default(),
                    attributes: Vec::new(),
                };
                self.osmo().request_presentation.push(widget);
                Ctx::Widget
            }
            (Ctx::Widget, Some("osd"), "presentationAttr") => {
                let (name, value) = (attr("name"), attr("value"));
                if name.is_none() || value.is_none() {
                    let (i, j, k) = self.position_in_widget();
                    diags.push(Diagnostic {
                        path: format!("OAMO[{i}].OSMO[{j}].requestPresentation[{k}].presentationAttr"),
                        message: "presentationAttr needs both name and value".into(),
                    });
                }
                let widget = self.osmo().request_presentation.last_mut().expect("inside widget");
                widget.attributes.push((name.unwrap_or_default(), value.unwrap_or_default()));
                Ctx::Ignored
            }
            (Ctx::Osmo, Some("st"), "query-request") => Ctx::QueryRequest,
            (Ctx::QueryRequest, None, "query") => {
                self.text.clear();
                Ctx::Query
            }
            (ctx, _, _) => {
                return Err(self.here(format!("unexpected element <{qname}> inside {ctx:?}")));
            }
        };
        self.stack.push(next);
        Ok(())
    }

    fn close(&mut self, diags: &mut Vec<Diagnostic>) -> Result<(), OsdError> {
        let ctx = self.stack.pop().expect("balanced by the reader");
        let text = std::mem::take(&mut self.text);
        match ctx {
            Ctx::Schedule => self.osmo().query_controls.query_schedule = Some(text.trim().to_string()),
            Ctx::ReportIfEmpty => match text.trim() {
                "true" | "1" => self.osmo().query_controls.report_if_empty = true,
                "false" | "0" => self.osmo().query_controls.report_if_empty = false,
                other => {
                    let (i, j) = self.position_in_osmo();
                    diags.push(Diagnostic {
                        path: format!("OAMO[{i}].OSMO[{j}].queryControls.reportIfEmpty"),
                        message: format!("`{other}` is not a boolean"),
                    });
                }
            },
            Ctx::Query => self.osmo().query_requests.push(text.trim().to_string()),
            _ => {}
        }
        Ok(())
    }

    fn attributes(&self, e: &BytesStart<'_>) -> Result<Vec<(String, String)>, OsdError> {
        let mut out = Vec::new();
        for a in e.attributes() {
            let a = a.map_err(|err| self.here(format!("bad attribute: {err}")))?;
            let key = String::from_utf8_lossy(a.key.as_ref()).into_owned();
            let value = a
                .decode_and_unescape_value(self.reader.decoder())
                .map_err(|err| self.here(format!("bad attribute value: {err}")))?
                .into_owned();
            out.push((key, value));
        }
        Ok(out)
    }

    fn check_namespaces(&self, attrs: &[(String, String)]) -> Result<(), OsdError> {
        let mut osd_declared = false;
        for (k, v) in attrs {
            let Some(prefix) = k.strip_prefix("xmlns:") else {
                if k == "xmlns" {
                    return Err(self.here("default namespace declarations are not supported"));
                }
                continue;
            };
            match NAMESPACES.iter().find(|(p, _)| *p == prefix) {
                Some((_, uri)) if uri == v => osd_declared |= prefix == "osd",
                Some((_, uri)) => {
                    return Err(self.here(format!("prefix `{prefix}` must bind `{uri}`, found `{v}`")));
                }
                None => return Err(self.here(format!("unknown namespace `{prefix}` = `{v}`"))),
            }
        }
        if !osd_declared {
            return Err(self.here("the `osd` namespace must be declared on the root element"));
        }
        Ok(())
    }

    fn oamo(&mut self) -> &mut Oamo {
        self.spec.oamos.last_mut().expect("inside an OAMO")
    }

    fn osmo(&mut self) -> &mut Osmo {
        self.oamo().osmos.last_mut().expect("inside an OSMO")
    }

    fn position_in_osmo(&self) -> (usize, usize) {
        let i = self.spec.oamos.len() - 1;
        (i, self.spec.oamos[i].osmos.len() - 1)
    }

    fn position_in_widget(&self) -> (usize, usize, usize) {
        let (i, j) = self.position_in_osmo();
        (i, j, self.spec.oamos[i].osmos[j].request_presentation.len() - 1)
    }
}

fn esc(s: &str) -> std::borrow::Cow<'_, str> {
    quick_xml::escape::escape(s)
}

/// Canonical XML form. Element order and namespace declarations follow the
/// reference document layout; attributes are written in a fixed order.
pub fn serialize_osdspec(spec: &OsdSpec) -> String {
    let mut out = String::from("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<osd:OSDSpec");
    for (i, (prefix, uri)) in NAMESPACES.iter().enumerate() {
        let sep = if i == 0 { " " } else { "\n\t" };
        let _ = write!(out, "{sep}xmlns:{prefix}=\"{uri}\"");
    }
    out.push_str(">\n");
    for oamo in &spec.oamos {
        let _ = writeln!(out, "\t<osd:OAMO name=\"{}\">", esc(&oamo.name));
        for osmo in &oamo.osmos {
            let _ = writeln!(out, "\t\t<osd:OSMO name=\"{}\">", esc(&osmo.name));
            let qc = &osmo.query_controls;
            out.push_str("\t\t\t<osd:queryControls>\n");
            if let Some(schedule) = &qc.query_schedule {
                let _ = writeln!(out, "\t\t\t\t<osd:QuerySchedule>{}</osd:QuerySchedule>", esc(schedule));
            }
            let _ = writeln!(out, "\t\t\t\t<osd:reportIfEmpty>{}</osd:reportIfEmpty>", qc.report_if_empty);
            out.push_str("\t\t\t</osd:queryControls>\n");
            if !osmo.request_presentation.is_empty() {
                out.push_str("\t\t\t<osd:requestPresentation>\n");
                for w in &osmo.request_presentation {
                    let _ = writeln!(out, "\t\t\t\t<osd:widget widgetID=\"{}\">", esc(&w.widget_id));
                    for (name, value) in &w.attributes {
                        let _ = writeln!(
                            out,
                            "\t\t\t\t\t<osd:presentationAttr name=\"{}\" value=\"{}\"/>",
                            esc(name),
                            esc(value)
                        );
                    }
                    out.push_str("\t\t\t\t</osd:widget>\n");
                }
                out.push_str("\t\t\t</osd:requestPresentation>\n");
            }
            for q in &osmo.query_requests {
                let _ = writeln!(out, "\t\t\t<st:query-request>\n\t\t\t\t<query>{}</query>\n\t\t\t</st:query-request>", esc(q));
            }
            out.push_str("\t\t</osd:OSMO>\n");
        }
        out.push_str("\t</osd:OAMO>\n");
    }
    out.push_str("</osd:OSDSpec>\n");
    out
}
