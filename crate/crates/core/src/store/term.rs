use std::fmt;
use std::sync::Arc;

use super::StoreError;

/// An absolute IRI. Validation is syntactic only: a scheme separator, no
/// whitespace and none of the characters that would break the line formats.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Iri(Arc<str>);

impl Iri {
    pub fn new(value: impl AsRef<str>) -> Result<Self, StoreError> {
        let value = value.as_ref();
        if let Some(reason) = iri_violation(value) {
            return Err(StoreError::InvalidIri {
                term: value.to_string(),
                reason,
            });
        }
        Ok(Iri(Arc::from(value)))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// The fragment or last path segment, e.g. `temperature` for
    /// `http://example.org/props#temperature`.
    pub fn local_name(&self) -> &str {
        let s = self.as_str();
        let cut = s
            .rfind(['#', '/', ':'])
            .map(|i| i + 1)
            .unwrap_or(0);
        if cut >= s.len() {
            s
        } else {
            &s[cut..]
        }
    }
}

fn iri_violation(value: &str) -> Option<&'static str> {
    if value.is_empty() {
        return Some("empty IRI");
    }
    match value.find(':') {
        None | Some(0) => return Some("missing scheme"),
        Some(_) => {}
    }
    if value.chars().any(char::is_whitespace) {
        return Some("contains whitespace");
    }
    if value.chars().any(|c| matches!(c, '<' | '>' | '"' | '{' | '}' | '\\' | '`')) {
        return Some("contains a reserved character");
    }
    None
}

impl fmt::Debug for Iri {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "<{}>", self.0)
    }
}

impl fmt::Display for Iri {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Literal {
    lexical: Arc<str>,
    datatype: Option<Iri>,
    language: Option<Arc<str>>,
}

impl Literal {
    pub fn plain(lexical: impl AsRef<str>) -> Self {
        Literal {
            lexical: Arc::from(lexical.as_ref()),
            datatype: None,
            language: None,
        }
    }

    pub fn typed(lexical: impl AsRef<str>, datatype: Iri) -> Self {
        Literal {
            lexical: Arc::from(lexical.as_ref()),
            datatype: Some(datatype),
            language: None,
        }
    }

    pub fn lang(lexical: impl AsRef<str>, tag: &str) -> Result<Self, StoreError> {
        let valid = !tag.is_empty()
            && tag.split('-').enumerate().all(|(i, part)| {
                !part.is_empty()
                    && part.chars().all(|c| {
                        if i == 0 {
                            c.is_ascii_alphabetic()
                        } else {
                            c.is_ascii_alphanumeric()
                        }
                    })
            });
        if !valid {
            return Err(StoreError::InvalidTerm {
                term: tag.to_string(),
                reason: "malformed language tag",
            });
        }
        Ok(Literal {
            lexical: Arc::from(lexical.as_ref()),
            datatype: None,
            language: Some(Arc::from(tag)),
        })
    }

    pub fn lexical(&self) -> &str {
        &self.lexical
    }

    pub fn datatype(&self) -> Option<&Iri> {
        self.datatype.as_ref()
    }

    pub fn language(&self) -> Option<&str> {
        self.language.as_deref()
    }
}

/// Subject or object position of a triple.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Term {
    Iri(Iri),
    Blank(Arc<str>),
    Literal(Literal),
}

impl Term {
    pub fn iri(value: impl AsRef<str>) -> Result<Self, StoreError> {
        Iri::new(value).map(Term::Iri)
    }

    pub fn blank(id: impl AsRef<str>) -> Result<Self, StoreError> {
        let id = id.as_ref();
        if id.is_empty()
            || !id
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
        {
            return Err(StoreError::InvalidTerm {
                term: id.to_string(),
                reason: "blank node ids are [A-Za-z0-9_-]+",
            });
        }
        Ok(Term::Blank(Arc::from(id)))
    }

    pub fn literal(lexical: impl AsRef<str>) -> Self {
        Term::Literal(Literal::plain(lexical))
    }

    pub fn typed_literal(lexical: impl AsRef<str>, datatype: Iri) -> Self {
        Term::Literal(Literal::typed(lexical, datatype))
    }

    pub fn as_iri(&self) -> Option<&Iri> {
        match self {
            Term::Iri(iri) => Some(iri),
            _ => None,
        }
    }

    pub fn as_literal(&self) -> Option<&Literal> {
        match self {
            Term::Literal(lit) => Some(lit),
            _ => None,
        }
    }

    pub fn is_literal(&self) -> bool {
        matches!(self, Term::Literal(_))
    }
}

impl From<Iri> for Term {
    fn from(iri: Iri) -> Self {
        Term::Iri(iri)
    }
}

impl From<Literal> for Term {
    fn from(lit: Literal) -> Self {
        Term::Literal(lit)
    }
}

/// Writes the term in the quoted line syntax shared by snapshots and query output.
impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Iri(iri) => write!(f, "<{}>", iri.as_str()),
            Term::Blank(id) => write!(f, "_:{id}"),
            Term::Literal(lit) => {
                f.write_str("\"")?;
                for c in lit.lexical().chars() {
                    match c {
                        '"' => f.write_str("\\\"")?,
                        '\\' => f.write_str("\\\\")?,
                        '\n' => f.write_str("\\n")?,
                        '\r' => f.write_str("\\r")?,
                        '\t' => f.write_str("\\t")?,
                        c => write!(f, "{c}")?,
                    }
                }
                f.write_str("\"")?;
                if let Some(dt) = lit.datatype() {
                    write!(f, "^^<{}>", dt.as_str())?;
                } else if let Some(tag) = lit.language() {
                    write!(f, "@{tag}")?;
                }
                Ok(())
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triple {
    pub subject: Term,
    pub predicate: Iri,
    pub object: Term,
}

impl Triple {
    pub fn new(subject: Term, predicate: Iri, object: impl Into<Term>) -> Result<Self, StoreError> {
        if subject.is_literal() {
            return Err(StoreError::InvalidTerm {
                term: subject.to_string(),
                reason: "literal in subject position",
            });
        }
        Ok(Triple {
            subject,
            predicate,
            object: object.into(),
        })
    }
}

impl fmt::Display for Triple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} <{}> {}", self.subject, self.predicate.as_str(), self.object)
    }
}

pub const DEFAULT_GRAPH: &str = "urn:hierion:default";

/// Named graph identity.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GraphId(Iri);

impl GraphId {
    pub fn new(iri: Iri) -> Self {
        GraphId(iri)
    }

    pub fn parse(value: &str) -> Result<Self, StoreError> {
        Iri::new(value).map(GraphId)
    }

    pub fn default_graph() -> Self {
        GraphId(Iri(Arc::from(DEFAULT_GRAPH)))
    }

    pub fn iri(&self) -> &Iri {
        &self.0
    }

    pub fn is_default(&self) -> bool {
        self.0.as_str() == DEFAULT_GRAPH
    }
}

impl fmt::Display for GraphId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "<{}>", self.0.as_str())
    }
}
